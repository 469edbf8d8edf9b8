#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "deskavoid/nav_env.hpp"
#include "deskavoid/nn/adam.hpp"
#include "deskavoid/nn/serialize.hpp"

namespace deskavoid::vision {

using nn::Mode;
using nn::Network;
using nn::Tensor;

/// Paired frames: augmented RGB (HWC, 3 channels) and the raw depth it was rendered with.
struct VisionDataset {
  int width = 0;
  int height = 0;
  std::size_t count = 0;
  std::vector<float> rgb;
  std::vector<float> depth;

  [[nodiscard]] std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }

  [[nodiscard]] Image rgb_image(std::size_t i) const {
    Image img(width, height, 3);
    std::copy_n(rgb.begin() + i * pixels() * 3, pixels() * 3, img.data.begin());
    return img;
  }
  [[nodiscard]] Image depth_image(std::size_t i) const {
    Image img(width, height, 1);
    std::copy_n(depth.begin() + i * pixels(), pixels(), img.data.begin());
    return img;
  }
  void push(const Image& rgb_frame, const Image& depth_frame) {
    rgb.insert(rgb.end(), rgb_frame.data.begin(), rgb_frame.data.end());
    depth.insert(depth.end(), depth_frame.data.begin(), depth_frame.data.end());
    ++count;
  }
  friend bool operator==(const VisionDataset&, const VisionDataset&) = default;
};

struct CollectOptions {
  int rollout_steps = 40;  // frames per random episode before a fresh reset
};

/// Frames from random resets followed by random-command rollouts. Depth is recorded before the
/// photometric augmentation is applied to the RGB frame.
inline VisionDataset collect_dataset(NavEnv& env, std::size_t n, Rng& rng, const CollectOptions& opt = {}) {
  if (n < 10) throw ValidationError("collect_dataset: need at least 10 images");
  const CameraModel& cam = env.config().camera;
  VisionDataset ds;
  ds.width = cam.width;
  ds.height = cam.height;
  ds.rgb.reserve(n * ds.pixels() * 3);
  ds.depth.reserve(n * ds.pixels());
  int left = 0;
  while (ds.count < n) {
    if (left == 0 || env.done()) {
      env.reset(rng, {uniform(rng, -1, 1), uniform(rng, -1, 1)});
      left = opt.rollout_steps;
    } else {
      env.step({uniform(rng, -1, 1), uniform(rng, -1, 1)}, rng);
      --left;
    }
    const Frame f = env.render();
    ds.push(augment(f.rgb, env.config().augment.sample(rng), rng), f.depth);
  }
  return ds;
}

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("dataset: truncated header");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_floats(std::ostream& out, const float* p, std::size_t n) {
  const auto bytes = floats_to_le_bytes(std::vector<float>(p, p + n));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void get_floats(std::istream& in, float* p, std::size_t n) {
  std::vector<unsigned char> bytes(n * 4);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw ValidationError("dataset: truncated record data");
  }
  const auto f = le_bytes_to_floats(bytes);
  std::copy(f.begin(), f.end(), p);
}

}  // namespace detail

/// "VDS1", u32 count, u32 width, u32 height, then per record RGB float32 then depth float32, LE.
inline void save_dataset(const std::string& path, const VisionDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path);
  out.write("VDS1", 4);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.count));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.width));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.height));
  const std::size_t px = ds.pixels();
  for (std::size_t i = 0; i < ds.count; ++i) {
    detail::put_floats(out, ds.rgb.data() + i * px * 3, px * 3);
    detail::put_floats(out, ds.depth.data() + i * px, px);
  }
  if (!out) throw RuntimeFailure("write failed for " + path);
}

inline VisionDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "VDS1", 4) != 0) throw ValidationError(path + ": not a VDS1 dataset");
  VisionDataset ds;
  ds.count = detail::get_u32(in);
  ds.width = static_cast<int>(detail::get_u32(in));
  ds.height = static_cast<int>(detail::get_u32(in));
  const std::size_t px = ds.pixels();
  ds.rgb.resize(ds.count * px * 3);
  ds.depth.resize(ds.count * px);
  for (std::size_t i = 0; i < ds.count; ++i) {
    detail::get_floats(in, ds.rgb.data() + i * px * 3, px * 3);
    detail::get_floats(in, ds.depth.data() + i * px, px);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ValidationError(path + ": trailing bytes after records");
  return ds;
}

struct VisionConfig {
  int images = 8000;
  int epochs = 15;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double depth_min = 0.1;
  double depth_max = 12.0;
  int latent_dim = kLatentDim;
  // Train share of the shuffled dataset.
  double train_fraction = 60000.0 / 65000.0;
  int rollout_steps = 40;

  void validate() const {
    if (images < 10) throw ValidationError("vision: images must be at least 10");
    if (epochs < 1 || batch_size < 2) throw ValidationError("vision: epochs >= 1 and batch_size >= 2 required");
    if (!(learning_rate > 0.0)) throw ValidationError("vision: learning_rate must be positive");
    if (!(depth_min > 0.0 && depth_min < depth_max)) throw ValidationError("vision: need 0 < depth_min < depth_max");
    if (latent_dim != kLatentDim) throw ValidationError("vision: latent_dim is fixed at 32 (policy contract)");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("vision: train_fraction in (0,1)");
  }
};

inline json vision_config_to_json(const VisionConfig& c, bool annotate = false) {
  const auto f = [&](const json& v, Source s = Source::default_value) { return annotate ? annotated(v, s) : v; };
  return {{"images", f(c.images)},
          {"epochs", f(c.epochs)},
          {"batch_size", f(c.batch_size)},
          {"learning_rate", f(c.learning_rate)},
          {"depth_min", f(c.depth_min)},
          {"depth_max", f(c.depth_max)},
          {"latent_dim", f(c.latent_dim, Source::paper)},
          {"train_fraction", f(c.train_fraction, Source::paper)},
          {"rollout_steps", f(c.rollout_steps)}};
}

inline VisionConfig vision_config_from_json(const json& j) {
  check_keys(j,
             {"images", "epochs", "batch_size", "learning_rate", "depth_min", "depth_max", "latent_dim",
              "train_fraction", "rollout_steps"},
             "vision");
  VisionConfig c;
  read_leaf(j, "images", c.images);
  read_leaf(j, "epochs", c.epochs);
  read_leaf(j, "batch_size", c.batch_size);
  read_leaf(j, "learning_rate", c.learning_rate);
  read_leaf(j, "depth_min", c.depth_min);
  read_leaf(j, "depth_max", c.depth_max);
  read_leaf(j, "latent_dim", c.latent_dim);
  read_leaf(j, "train_fraction", c.train_fraction);
  read_leaf(j, "rollout_steps", c.rollout_steps);
  c.validate();
  return c;
}

/// Four stride-2 convolutions with batch norms, then a dense map to the latent.
inline Network make_encoder(int width, int height, Rng& rng, int latent = kLatentDim) {
  if (width % 16 || height % 16) throw ValidationError("encoder: resolution must be a multiple of 16");
  const int fh = height / 16, fw = width / 16;
  return Network({3, height, width},
                 {nn::conv(3, 16), nn::batch_norm(16), nn::relu(), nn::conv(16, 32), nn::batch_norm(32), nn::relu(),
                  nn::conv(32, 64), nn::batch_norm(64), nn::relu(), nn::conv(64, 64), nn::batch_norm(64), nn::relu(),
                  nn::reshape({64 * fh * fw}), nn::dense(64 * fh * fw, latent)},
                 rng);
}

/// Mirror of the encoder with transpose convolutions, squashed to [0,1].
inline Network make_decoder(int width, int height, Rng& rng, int latent = kLatentDim) {
  const int fh = height / 16, fw = width / 16;
  return Network({latent},
                 {nn::dense(latent, 64 * fh * fw), nn::relu(), nn::reshape({64, fh, fw}), nn::conv_transpose(64, 64),
                  nn::batch_norm(64), nn::relu(), nn::conv_transpose(64, 32), nn::batch_norm(32), nn::relu(),
                  nn::conv_transpose(32, 16), nn::batch_norm(16), nn::relu(), nn::conv_transpose(16, 1), nn::sigmoid()},
                 rng);
}

struct VisionModel {
  Network encoder;
  Network decoder;
  double depth_min = 0.1;
  double depth_max = 12.0;

  [[nodiscard]] int width() const { return encoder.input_shape()[2]; }
  [[nodiscard]] int height() const { return encoder.input_shape()[1]; }
};

inline json vision_model_to_json(const VisionModel& m) {
  return {{"format", "deskavoid-vision-v1"},
          {"depth_min", m.depth_min},
          {"depth_max", m.depth_max},
          {"encoder", nn::network_to_json(m.encoder)},
          {"decoder", nn::network_to_json(m.decoder)}};
}

inline VisionModel vision_model_from_json(const json& j) {
  try {
    if (j.at("format") != "deskavoid-vision-v1") throw ValidationError("not a vision weights file");
    return {nn::network_from_json(j.at("encoder")), nn::network_from_json(j.at("decoder")), j.at("depth_min"),
            j.at("depth_max")};
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed vision weights: ") + e.what());
  }
}

inline void save_vision_model(const std::string& path, const VisionModel& m) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path);
  out << vision_model_to_json(m).dump() << '\n';
}

inline VisionModel load_vision_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open vision weights " + path);
  try {
    return vision_model_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

/// HWC RGB images to an NCHW batch.
inline Tensor rgb_batch(const VisionDataset& ds, std::span<const std::size_t> idx) {
  const int h = ds.height, w = ds.width;
  const std::size_t px = ds.pixels();
  Tensor t({static_cast<int>(idx.size()), 3, h, w});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const float* src = ds.rgb.data() + idx[b] * px * 3;
    float* dst = t.data.data() + b * px * 3;
    for (std::size_t p = 0; p < px; ++p) {
      for (int c = 0; c < 3; ++c) dst[c * px + p] = src[p * 3 + c];
    }
  }
  return t;
}

inline Tensor image_to_tensor(const Image& rgb) {
  if (rgb.channels != 3) throw ValidationError("encoder input must be RGB");
  const std::size_t px = rgb.pixels();
  Tensor t({1, 3, rgb.height, rgb.width});
  for (std::size_t p = 0; p < px; ++p) {
    for (int c = 0; c < 3; ++c) t.data[c * px + p] = rgb.data[p * 3 + c];
  }
  return t;
}

/// Normalized log-depth targets, shape (B, 1, H, W).
inline Tensor target_batch(const VisionDataset& ds, std::span<const std::size_t> idx, double d_min, double d_max) {
  const std::size_t px = ds.pixels();
  Tensor t({static_cast<int>(idx.size()), 1, ds.height, ds.width});
  Image d(ds.width, ds.height, 1);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    std::copy_n(ds.depth.begin() + idx[b] * px, px, d.data.begin());
    const Image l = log_depth_transform(d, d_min, d_max);
    std::copy(l.data.begin(), l.data.end(), t.data.begin() + b * px);
  }
  return t;
}

inline double mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// Eval-mode reconstruction error in normalized log-depth space.
inline double evaluate_mse(const VisionModel& m, const VisionDataset& ds, std::span<const std::size_t> idx,
                           int batch = 256) {
  double sum = 0.0;
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const auto chunk = idx.subspan(start, std::min<std::size_t>(batch, idx.size() - start));
    const Tensor y = m.decoder.infer(m.encoder.infer(rgb_batch(ds, chunk)));
    sum += mse(y, target_batch(ds, chunk, m.depth_min, m.depth_max)) * static_cast<double>(chunk.size());
  }
  return sum / static_cast<double>(idx.size());
}

/// Variance of the log-depth targets: the MSE of the best constant prediction.
inline double constant_baseline_mse(const VisionDataset& ds, std::span<const std::size_t> idx, double d_min,
                                    double d_max) {
  const Tensor t = target_batch(ds, idx, d_min, d_max);
  double mean = 0.0;
  for (float v : t.data) mean += v;
  mean /= static_cast<double>(t.size());
  double var = 0.0;
  for (float v : t.data) var += (v - mean) * (v - mean);
  return var / static_cast<double>(t.size());
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then floor(count * train_fraction) records go to training.
inline Split split_dataset(std::size_t count, double train_fraction, Rng& rng) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(count * train_fraction));
  if (n_train == 0 || n_train == count) throw ValidationError("vision: split leaves an empty side");
  return {{idx.begin(), idx.begin() + n_train}, {idx.begin() + n_train, idx.end()}};
}

struct EpochMetrics {
  int epoch = 0;
  double train_mse = 0.0;
  double test_mse = 0.0;
};

struct TrainResult {
  VisionModel model;
  std::vector<EpochMetrics> metrics;
  double baseline_train_mse = 0.0;
  double baseline_test_mse = 0.0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

/// One optimizer step on a minibatch; returns its train-mode loss.
inline double train_batch(VisionModel& m, nn::AdamState& enc_opt, nn::AdamState& dec_opt, const nn::AdamConfig& opt,
                          const Tensor& x, const Tensor& target) {
  Network::Cache ce, cd;
  const Tensor z = m.encoder.train_forward(x, ce);
  const Tensor y = m.decoder.train_forward(z, cd);
  const double loss = mse(y, target);
  Tensor gy(y.shape);
  const float scale = 2.0f / static_cast<float>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) gy.data[i] = scale * (y.data[i] - target.data[i]);
  auto gd = m.decoder.zero_gradients();
  const Tensor gz = m.decoder.backward(cd, gy, &gd);
  auto ge = m.encoder.zero_gradients();
  m.encoder.backward(ce, gz, &ge);
  nn::adam_step(m.decoder.parameters(), gd, dec_opt, opt);
  nn::adam_step(m.encoder.parameters(), ge, enc_opt, opt);
  return loss;
}

/// Minimizes MSE in normalized log-depth space. Batch-norm statistics only see training batches;
/// both splits are scored in eval mode after every epoch.
inline TrainResult train_autoencoder(const VisionDataset& ds, const VisionConfig& cfg, Rng& rng,
                                     const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  cfg.validate();
  Split split = split_dataset(ds.count, cfg.train_fraction, rng);
  TrainResult r;
  r.train_count = split.train.size();
  r.test_count = split.test.size();
  r.model = {make_encoder(ds.width, ds.height, rng), make_decoder(ds.width, ds.height, rng), cfg.depth_min,
             cfg.depth_max};
  r.baseline_train_mse = constant_baseline_mse(ds, split.train, cfg.depth_min, cfg.depth_max);
  r.baseline_test_mse = constant_baseline_mse(ds, split.test, cfg.depth_min, cfg.depth_max);
  nn::AdamConfig opt;
  opt.lr = cfg.learning_rate;
  nn::AdamState enc_opt(r.model.encoder.parameters()), dec_opt(r.model.decoder.parameters());
  std::vector<std::size_t> order = split.train;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    // drop the ragged tail so every batch has batch-norm statistics over batch_size samples
    for (std::size_t start = 0; start + cfg.batch_size <= order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> b(order.data() + start, cfg.batch_size);
      const double loss =
          train_batch(r.model, enc_opt, dec_opt, opt, rgb_batch(ds, b), target_batch(ds, b, cfg.depth_min, cfg.depth_max));
      if (!std::isfinite(loss)) throw RuntimeFailure("vision training diverged (loss NaN) in epoch " + std::to_string(epoch));
    }
    EpochMetrics em{epoch, evaluate_mse(r.model, ds, split.train), evaluate_mse(r.model, ds, split.test)};
    if (!std::isfinite(em.train_mse) || !std::isfinite(em.test_mse)) {
      throw RuntimeFailure("vision training diverged (loss NaN) in epoch " + std::to_string(epoch));
    }
    r.metrics.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  return r;
}

inline json epoch_metrics_to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"train_mse", m.train_mse}, {"test_mse", m.test_mse}};
}

/// Frozen encoder forward in eval mode.
inline std::vector<float> encode(const VisionModel& m, const Image& rgb) {
  if (rgb.width != m.width() || rgb.height != m.height()) {
    throw ValidationError("encode: image is " + std::to_string(rgb.width) + "x" + std::to_string(rgb.height) +
                          ", encoder expects " + std::to_string(m.width()) + "x" + std::to_string(m.height()));
  }
  const Tensor z = m.encoder.infer(image_to_tensor(rgb));
  return {z.data.begin(), z.data.end()};
}

/// Encoder adapter for NavEnv; holds its own copy of the weights.
inline LatentEncoder make_latent_encoder(VisionModel m) {
  auto shared = std::make_shared<const VisionModel>(std::move(m));
  return [shared](const Image& rgb) { return encode(*shared, rgb); };
}

}  // namespace deskavoid::vision
