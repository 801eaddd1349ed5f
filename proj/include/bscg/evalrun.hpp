#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bscg/checkpoint.hpp"
#include "bscg/dataset.hpp"
#include "bscg/objective.hpp"

namespace bscg {

// Rebuilds the model stored in the checkpoint, runs every PNG in `input_dir`
// through it, and writes one 8-bit saliency map per input (round(255*p),
// original size, same stem). Returns the number of maps written.
template <class T>
int infer_dir(const std::string& ckpt_path, const std::string& input_dir,
              const std::string& out_dir) {
  const ModelConfig mc = read_checkpoint_config(ckpt_path);
  BscgNet<T> net(mc);
  load_checkpoint(net, ckpt_path);

  auto inputs = detail::list_pngs(input_dir);
  if (inputs.empty()) throw DataError("infer: no inputs (*.png) in '" + input_dir + "'");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  const int S = mc.input_size;
  int written = 0;
  for (const auto& path : inputs) {
    Tensor4<T> full = image_to_tensor<T>(read_png(path.string()));
    const int h0 = full.h, w0 = full.w;
    ForwardState<T> st = net.forward(resize_bilinear(full, S, S));
    if (!st.final_prob.value().all_finite())
      throw NumericError("infer: non-finite output for '" + path.string() +
                         "' (corrupt weights?)");
    Tensor4<T> prob = resize_bilinear(st.final_prob.value(), h0, w0);
    const fs::path out = fs::path(out_dir) / (path.stem().string() + ".png");
    write_png(out.string(), tensor_to_gray(prob));
    ++written;
  }
  return written;
}

namespace detail {

// Mean of channels, scaled to [0,1]; predictions we write are already gray.
inline Tensor4<double> gray_unit_tensor(const ImageU8& img) {
  Tensor4<double> t(1, 1, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int c = 0; c < img.channels; ++c) acc += img.at(y, x, c);
      t.at(0, 0, y, x) = acc / (255.0 * img.channels);
    }
  return t;
}

}  // namespace detail

// Scores a directory of saliency maps against ground-truth masks matched by
// stem, writing per_image.csv, aggregate.json, and curves.csv (one row per
// threshold, 256 rows) into `out_dir`. Predictions are resized bilinearly to
// the ground-truth size when they differ.
inline MetricsReport evaluate_dirs(const std::string& pred_dir, const std::string& gt_dir,
                                   const std::string& out_dir) {
  auto preds = detail::list_pngs(pred_dir);
  auto gts = detail::list_pngs(gt_dir);
  if (gts.empty()) throw DataError("eval: no ground-truth masks (*.png) in '" + gt_dir + "'");

  std::string unmatched;
  std::vector<std::pair<std::string, std::string>> pairs;  // pred path, gt path
  {
    std::vector<std::pair<std::string, std::string>> pred_by_stem, gt_by_stem;
    for (const auto& p : preds) pred_by_stem.emplace_back(p.stem().string(), p.string());
    for (const auto& g : gts) gt_by_stem.emplace_back(g.stem().string(), g.string());
    for (const auto& [stem, gpath] : gt_by_stem) {
      auto it = std::find_if(pred_by_stem.begin(), pred_by_stem.end(),
                             [&](const auto& pr) { return pr.first == stem; });
      if (it == pred_by_stem.end())
        unmatched += "  ground truth without prediction: '" + stem + "'\n";
      else
        pairs.emplace_back(it->second, gpath);
    }
    for (const auto& [stem, ppath] : pred_by_stem)
      if (std::none_of(gt_by_stem.begin(), gt_by_stem.end(),
                       [&](const auto& gr) { return gr.first == stem; }))
        unmatched += "  prediction without ground truth: '" + stem + "'\n";
  }
  if (!unmatched.empty()) throw DataError("eval: unmatched stems:\n" + unmatched);

  std::vector<ImageMetrics> records;
  for (const auto& [ppath, gpath] : pairs) {
    Tensor4<double> gt = mask_to_tensor<double>(read_png(gpath));
    Tensor4<double> pred = detail::gray_unit_tensor(read_png(ppath));
    if (pred.h != gt.h || pred.w != gt.w) pred = resize_bilinear(pred, gt.h, gt.w);
    ImageMetrics rec;
    rec.stem = std::filesystem::path(gpath).stem().string();
    rec.mae = metric_mae(pred, gt);
    rec.s = s_measure(pred, gt);
    rec.curve = f_measure_curve(pred, gt);
    records.push_back(std::move(rec));
  }
  MetricsReport rep = aggregate(std::move(records));

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream csv((fs::path(out_dir) / "per_image.csv").string(), std::ios::trunc);
    if (!csv) throw DataError("eval: cannot write per_image.csv in '" + out_dir + "'");
    csv << "stem,mae,s,max_f\n";
    csv.precision(10);
    for (const auto& r : rep.per_image)
      csv << r.stem << ',' << r.mae << ',' << r.s.s << ',' << r.curve.max_f << '\n';
  }
  {
    nlohmann::json j;
    j["count"] = rep.count;
    j["mean_mae"] = rep.mean_mae;
    j["mean_s"] = rep.mean_s;
    j["mean_max_f"] = rep.mean_max_f;
    j["mae_quartiles"] = {{"min", rep.mae_quartiles.min},
                          {"q1", rep.mae_quartiles.q1},
                          {"median", rep.mae_quartiles.median},
                          {"q3", rep.mae_quartiles.q3},
                          {"max", rep.mae_quartiles.max}};
    std::ofstream js((fs::path(out_dir) / "aggregate.json").string(), std::ios::trunc);
    if (!js) throw DataError("eval: cannot write aggregate.json in '" + out_dir + "'");
    js << j.dump(2) << '\n';
  }
  {
    std::ofstream csv((fs::path(out_dir) / "curves.csv").string(), std::ios::trunc);
    if (!csv) throw DataError("eval: cannot write curves.csv in '" + out_dir + "'");
    csv << "threshold,precision,recall,f\n";
    csv.precision(10);
    for (int t = 0; t < 256; ++t)
      csv << t << ',' << rep.mean_precision[t] << ',' << rep.mean_recall[t] << ','
          << rep.mean_f[t] << '\n';
  }
  return rep;
}

}  // namespace bscg
