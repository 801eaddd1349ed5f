#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "bscg/checkpoint.hpp"
#include "bscg/dataset.hpp"
#include "bscg/objective.hpp"

namespace bscg {

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0, bce = 0.0, iou = 0.0;  // means over batches
};

// Training is deterministic unconditionally: single-threaded math and seeded
// draws make the run a pure function of (config, dataset bytes).
struct TrainConfig {
  ModelConfig model;
  double lr = 1e-4;
  int batch_size = 8;
  int epochs = 30;
  double lr_decay = 0.1;
  int lr_decay_every = 30;  // epochs per decay step
  unsigned long long seed = 1;
  bool augment = true;
  AugmentSwitches aug;
  std::string image_dir, mask_dir;
  std::string out_dir;
  std::function<void(const EpochLog&)> on_epoch;  // optional progress hook
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::string final_ckpt, best_ckpt, log_csv;
  double best_loss = 0.0;
  int best_epoch = 0;
};

// Stepped decay: epochs 1..N hold the base rate, then every further block of
// `lr_decay_every` epochs multiplies by `lr_decay` (1e-4 becomes 1e-5 at
// epoch 31 with the defaults).
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.lr * std::pow(cfg.lr_decay, double((epoch - 1) / cfg.lr_decay_every));
}

template <class T>
TrainResult train(const TrainConfig& cfg) {
  require(cfg.batch_size > 0, "train: batch size must be positive");
  require(cfg.epochs > 0, "train: epoch count must be positive");
  require(cfg.lr > 0.0, "train: learning rate must be positive");
  require(cfg.lr_decay_every > 0, "train: lr decay interval must be positive");
  require(!cfg.out_dir.empty(), "train: output directory required");

  auto data = load_dataset<T>(cfg.image_dir, cfg.mask_dir, cfg.model.input_size);
  BscgNet<T> net(cfg.model);

  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  TrainResult res;
  res.final_ckpt = (fs::path(cfg.out_dir) / "final.ckpt").string();
  res.best_ckpt = (fs::path(cfg.out_dir) / "best.ckpt").string();
  res.log_csv = (fs::path(cfg.out_dir) / "train_log.csv").string();
  res.best_loss = std::numeric_limits<double>::infinity();

  RandomSource shuffle_rng(RandomSource(cfg.seed).derive(0x53485546ull));
  RandomSource aug_rng(RandomSource(cfg.seed).derive(0x41554721ull));

  const int S = cfg.model.input_size;
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    for (size_t i = order.size(); i > 1; --i) {
      const size_t j = size_t(shuffle_rng.uniform_int(0, int(i - 1)));
      std::swap(order[i - 1], order[j]);
    }

    double ep_loss = 0.0, ep_bce = 0.0, ep_iou = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
      const int B = int(std::min(order.size() - start, size_t(cfg.batch_size)));
      Tensor4<T> images(B, 3, S, S), masks(B, 1, S, S);
      for (int b = 0; b < B; ++b) {
        const Sample<T>& base = data[order[start + b]];
        Sample<T> s = cfg.augment ? augment(base, aug_rng, cfg.aug) : base;
        std::copy(s.image.data.begin(), s.image.data.end(),
                  images.data.begin() + size_t(b) * 3 * S * S);
        std::copy(s.mask.data.begin(), s.mask.data.end(),
                  masks.data.begin() + size_t(b) * S * S);
      }

      ForwardState<T> st = net.forward(images);
      LossTerms<T> terms = joint_loss<T>(st.logits, masks, cfg.model.use_iou_loss);
      if (!std::isfinite(terms.total)) {
        const char* term = !std::isfinite(terms.bce)   ? "bce"
                           : !std::isfinite(terms.iou) ? "iou"
                                                       : "joint";
        throw NumericError("train: non-finite " + std::string(term) + " loss at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      net.params().zero_grads();
      backward(terms.joint);
      adam_step(net.params(), lr);

      ep_loss += terms.total;
      ep_bce += terms.bce;
      ep_iou += terms.iou;
      ++batches;
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr;
    row.loss = ep_loss / batches;
    row.bce = ep_bce / batches;
    row.iou = ep_iou / batches;
    res.log.push_back(row);
    if (cfg.on_epoch) cfg.on_epoch(row);

    if (row.loss < res.best_loss) {
      res.best_loss = row.loss;
      res.best_epoch = epoch;
      save_checkpoint(net, res.best_ckpt);
    }
  }

  save_checkpoint(net, res.final_ckpt);

  std::ofstream csv(res.log_csv, std::ios::trunc);
  if (!csv) throw DataError("train: cannot write '" + res.log_csv + "'");
  csv << "epoch,lr,loss,bce,iou\n";
  csv.precision(12);
  for (const EpochLog& r : res.log)
    csv << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.bce << ',' << r.iou << '\n';
  return res;
}

}  // namespace bscg
