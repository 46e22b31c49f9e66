// Copyright 2026 The cvarprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "cvarprobe/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "byte_io.hpp"
#include "cvarprobe/error.hpp"
#include "cvarprobe/rng.hpp"

namespace cvarprobe {
namespace {

constexpr std::array<char, 4> kCheckpointMagic = {'M', 'L', 'P', 'C'};
constexpr std::uint64_t kCheckpointHeaderBytes = 4 + 4 + 1 + 4 * 4 + 3 * 8;

std::string shape_str(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

// out = in * weight^T + bias, accumulating over the input index in order.
Matrix affine(const Matrix& in, const DenseLayer& layer) {
  const std::size_t b = in.rows();
  const std::size_t fan_in = in.cols();
  const std::size_t fan_out = layer.weight.rows();
  Matrix out(b, fan_out);
  for (std::size_t i = 0; i < b; ++i) {
    const auto x = in.row(i);
    for (std::size_t j = 0; j < fan_out; ++j) {
      const auto w = layer.weight.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < fan_in; ++k) acc += x[k] * w[k];
      out(i, j) = acc + layer.bias[j];
    }
  }
  return out;
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void fill_he_normal(Matrix& w, Rng& rng) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(w.cols()));
  for (double& v : w.values()) v = std_dev * rng.normal();
}

HiddenCache hidden_forward(const Matrix& in, const DenseLayer& layer, const NormAffine& norm,
                           const RunningStats& running, const MlpConfig& config, Mode mode, Rng& rng,
                           Matrix& out) {
  const Matrix z = affine(in, layer);
  const std::size_t b = z.rows();
  const std::size_t h = z.cols();

  HiddenCache cache;
  cache.normalized = Matrix(b, h);
  cache.inv_std.assign(h, 0.0);
  if (mode == Mode::kTrain) {
    cache.batch_mean.assign(h, 0.0);
    cache.batch_var.assign(h, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < h; ++j) cache.batch_mean[j] += z(i, j);
    }
    for (std::size_t j = 0; j < h; ++j) cache.batch_mean[j] /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < h; ++j) {
        const double c = z(i, j) - cache.batch_mean[j];
        cache.batch_var[j] += c * c;
      }
    }
    for (std::size_t j = 0; j < h; ++j) {
      cache.batch_var[j] /= static_cast<double>(b);
      cache.inv_std[j] = 1.0 / std::sqrt(cache.batch_var[j] + config.bn_epsilon);
    }
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < h; ++j) {
        cache.normalized(i, j) = (z(i, j) - cache.batch_mean[j]) * cache.inv_std[j];
      }
    }
  } else {
    for (std::size_t j = 0; j < h; ++j) cache.inv_std[j] = 1.0 / std::sqrt(running.var[j] + config.bn_epsilon);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < h; ++j) {
        cache.normalized(i, j) = (z(i, j) - running.mean[j]) * cache.inv_std[j];
      }
    }
  }

  cache.pre_relu = Matrix(b, h);
  cache.mask = Matrix(b, h, 1.0);
  const bool drop = mode == Mode::kTrain && config.dropout > 0.0;
  if (drop) {
    const double keep_scale = 1.0 / (1.0 - config.dropout);
    for (double& m : cache.mask.values()) m = rng.uniform() >= config.dropout ? keep_scale : 0.0;
  }
  out = Matrix(b, h);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      const double p = norm.scale[j] * cache.normalized(i, j) + norm.shift[j];
      cache.pre_relu(i, j) = p;
      const double a = p > 0.0 ? p : 0.0;
      out(i, j) = drop ? a * cache.mask(i, j) : a;
    }
  }
  cache.output = out;
  return cache;
}

// Backward through linear -> batch-norm -> ReLU -> dropout. `dout` is the
// gradient w.r.t. the block output; returns the gradient w.r.t. the block
// input `in`.
Matrix hidden_backward(const Matrix& in, const DenseLayer& layer, const NormAffine& norm, const HiddenCache& cache,
                       const Matrix& dout, DenseLayer& dlayer, NormAffine& dnorm) {
  const std::size_t b = dout.rows();
  const std::size_t h = dout.cols();
  const auto bd = static_cast<double>(b);

  Matrix dxhat(b, h);
  Matrix dpre(b, h);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      const double da = dout(i, j) * cache.mask(i, j);
      const double dp = cache.pre_relu(i, j) > 0.0 ? da : 0.0;
      dpre(i, j) = dp;
      dxhat(i, j) = dp * norm.scale[j];
    }
  }
  std::vector<double> sum_dxhat(h, 0.0);
  std::vector<double> sum_dxhat_xhat(h, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      dnorm.scale[j] += dpre(i, j) * cache.normalized(i, j);
      dnorm.shift[j] += dpre(i, j);
      sum_dxhat[j] += dxhat(i, j);
      sum_dxhat_xhat[j] += dxhat(i, j) * cache.normalized(i, j);
    }
  }
  Matrix dz(b, h);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < h; ++j) {
      dz(i, j) = cache.inv_std[j] / bd *
                 (bd * dxhat(i, j) - sum_dxhat[j] - cache.normalized(i, j) * sum_dxhat_xhat[j]);
    }
  }

  const std::size_t fan_in = in.cols();
  Matrix din(b, fan_in);
  for (std::size_t i = 0; i < b; ++i) {
    const auto x = in.row(i);
    for (std::size_t j = 0; j < h; ++j) {
      const double g = dz(i, j);
      auto dw = dlayer.weight.row(j);
      for (std::size_t k = 0; k < fan_in; ++k) dw[k] += g * x[k];
      dlayer.bias[j] += g;
    }
  }
  for (std::size_t i = 0; i < b; ++i) {
    auto dx = din.row(i);
    for (std::size_t j = 0; j < h; ++j) {
      const double g = dz(i, j);
      const auto w = layer.weight.row(j);
      for (std::size_t k = 0; k < fan_in; ++k) dx[k] += g * w[k];
    }
  }
  return din;
}

}  // namespace

void validate_mlp_config(const MlpConfig& config) {
  validate_task(config.task);
  if (config.input_dim < 1 || config.hidden1 < 1 || config.hidden2 < 1) {
    throw Error(ErrorCode::kInvalidArgument, "all MLP dimensions must be >= 1");
  }
  if (!(config.dropout >= 0.0 && config.dropout < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "dropout must lie in [0,1)");
  }
  if (!(config.bn_epsilon > 0.0)) throw Error(ErrorCode::kInvalidArgument, "batch-norm epsilon must be > 0");
  if (!(config.bn_momentum > 0.0 && config.bn_momentum <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "batch-norm momentum must lie in (0,1]");
  }
}

std::array<std::span<double>, 10> Trainable::tensors() {
  return {dense[0].weight.values(), dense[0].bias, norm[0].scale, norm[0].shift,
          dense[1].weight.values(), dense[1].bias, norm[1].scale, norm[1].shift,
          dense[2].weight.values(), dense[2].bias};
}

std::array<std::span<const double>, 10> Trainable::tensors() const {
  return {dense[0].weight.values(), dense[0].bias, norm[0].scale, norm[0].shift,
          dense[1].weight.values(), dense[1].bias, norm[1].scale, norm[1].shift,
          dense[2].weight.values(), dense[2].bias};
}

Trainable Trainable::zeros_like() const {
  Trainable z = *this;
  for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

std::size_t Trainable::parameter_count() const {
  std::size_t count = 0;
  for (const auto t : tensors()) count += t.size();
  return count;
}

MlpParams init_params(const MlpConfig& config, std::uint64_t seed) {
  validate_mlp_config(config);
  const std::array<std::size_t, 4> dims = {config.input_dim, config.hidden1, config.hidden2, config.output_dim()};
  MlpParams p;
  p.config = config;
  Rng rng(seed);
  for (std::size_t l = 0; l < 3; ++l) {
    auto& layer = p.trainable.dense[l];
    layer.weight = Matrix(dims[l + 1], dims[l]);
    fill_he_normal(layer.weight, rng);
    layer.bias.assign(dims[l + 1], 0.0);
  }
  for (std::size_t l = 0; l < 2; ++l) {
    p.trainable.norm[l].scale.assign(dims[l + 1], 1.0);
    p.trainable.norm[l].shift.assign(dims[l + 1], 0.0);
    p.running[l].mean.assign(dims[l + 1], 0.0);
    p.running[l].var.assign(dims[l + 1], 1.0);
  }
  quantize_to_storage(p);
  return p;
}

void quantize_to_storage(MlpParams& params) {
  const auto round = [](std::span<double> t) {
    for (double& v : t) v = static_cast<double>(static_cast<float>(v));
  };
  for (auto t : params.trainable.tensors()) round(t);
  for (auto& r : params.running) {
    round(r.mean);
    round(r.var);
  }
}

ForwardResult forward(const MlpParams& params, const Matrix& batch, Mode mode, std::uint64_t dropout_seed) {
  const auto& config = params.config;
  if (batch.cols() != config.input_dim) {
    throw Error(ErrorCode::kShapeMismatch, "batch is " + shape_str(batch.rows(), batch.cols()) +
                                               ", model expects d=" + std::to_string(config.input_dim));
  }
  if (mode == Mode::kTrain && batch.rows() < 2) {
    throw Error(ErrorCode::kDegenerateBatch, "TRAIN mode needs b >= 2 for batch statistics, got b=" +
                                                 std::to_string(batch.rows()));
  }
  ForwardResult result;
  result.cache.mode = mode;
  result.cache.input = batch;
  Rng rng(dropout_seed);
  Matrix h1;
  Matrix h2;
  result.cache.hidden[0] = hidden_forward(batch, params.trainable.dense[0], params.trainable.norm[0],
                                          params.running[0], config, mode, rng, h1);
  result.cache.hidden[1] = hidden_forward(h1, params.trainable.dense[1], params.trainable.norm[1],
                                          params.running[1], config, mode, rng, h2);
  result.logits = affine(h2, params.trainable.dense[2]);
  return result;
}

void update_running_stats(MlpParams& params, const ForwardCache& cache) {
  if (cache.mode != Mode::kTrain) {
    throw Error(ErrorCode::kCacheModeMismatch, "running statistics need a TRAIN-mode cache");
  }
  const double momentum = params.config.bn_momentum;
  const auto b = static_cast<double>(cache.input.rows());
  for (std::size_t l = 0; l < 2; ++l) {
    auto& running = params.running[l];
    const auto& hidden = cache.hidden[l];
    for (std::size_t j = 0; j < running.mean.size(); ++j) {
      const double unbiased = hidden.batch_var[j] * b / (b - 1.0);
      running.mean[j] = (1.0 - momentum) * running.mean[j] + momentum * hidden.batch_mean[j];
      running.var[j] = (1.0 - momentum) * running.var[j] + momentum * unbiased;
    }
  }
}

Matrix activate(const Matrix& logits, const TaskKind& task) {
  Matrix probs(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    auto p = probs.row(i);
    if (task.is_multiclass()) {
      const double top = *std::max_element(z.begin(), z.end());
      double total = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j) {
        p[j] = std::exp(z[j] - top);
        total += p[j];
      }
      for (double& v : p) v /= total;
    } else {
      for (std::size_t j = 0; j < z.size(); ++j) p[j] = stable_sigmoid(z[j]);
    }
  }
  return probs;
}

Predictions predict_from_logits(const Matrix& logits, const TaskKind& task) {
  if (logits.cols() != task.width) {
    throw Error(ErrorCode::kShapeMismatch, "logits have " + std::to_string(logits.cols()) + " columns, task has " +
                                               std::to_string(task.width));
  }
  Predictions out;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto z = logits.row(i);
    if (task.is_multiclass()) {
      // max_element returns the first maximum, i.e. the lowest index.
      out.classes.push_back(static_cast<std::uint16_t>(std::max_element(z.begin(), z.end()) - z.begin()));
    } else {
      for (const double v : z) out.units.push_back(v >= 0.0 ? 1 : 0);
    }
  }
  return out;
}

Predictions predict(const MlpParams& params, const Matrix& features, const TaskKind& task) {
  if (params.config.task != task) throw Error(ErrorCode::kTaskMismatch, "model head does not match the task");
  return predict_from_logits(forward(params, features, Mode::kEval).logits, task);
}

Gradients backward(const MlpParams& params, const ForwardCache& cache, const Matrix& dloss_dlogits) {
  if (cache.mode != Mode::kTrain) {
    throw Error(ErrorCode::kCacheModeMismatch, "backward needs a TRAIN-mode forward cache");
  }
  const auto& h2 = cache.hidden[1].output;
  const auto& out_layer = params.trainable.dense[2];
  if (dloss_dlogits.rows() != h2.rows() || dloss_dlogits.cols() != out_layer.weight.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "dloss/dlogits is " + shape_str(dloss_dlogits.rows(), dloss_dlogits.cols()) +
                                               ", expected " + shape_str(h2.rows(), out_layer.weight.rows()));
  }
  Gradients grads = params.trainable.zeros_like();
  const std::size_t b = h2.rows();
  const std::size_t out = out_layer.weight.rows();
  const std::size_t width = h2.cols();

  auto& d3 = grads.dense[2];
  for (std::size_t i = 0; i < b; ++i) {
    const auto x = h2.row(i);
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dloss_dlogits(i, o);
      auto dw = d3.weight.row(o);
      for (std::size_t k = 0; k < width; ++k) dw[k] += g * x[k];
      d3.bias[o] += g;
    }
  }
  Matrix dh2(b, width);
  for (std::size_t i = 0; i < b; ++i) {
    auto dx = dh2.row(i);
    for (std::size_t o = 0; o < out; ++o) {
      const double g = dloss_dlogits(i, o);
      const auto w = out_layer.weight.row(o);
      for (std::size_t k = 0; k < width; ++k) dx[k] += g * w[k];
    }
  }
  const Matrix dh1 = hidden_backward(cache.hidden[0].output, params.trainable.dense[1], params.trainable.norm[1],
                                     cache.hidden[1], dh2, grads.dense[1], grads.norm[1]);
  hidden_backward(cache.input, params.trainable.dense[0], params.trainable.norm[0], cache.hidden[0], dh1,
                  grads.dense[0], grads.norm[0]);
  return grads;
}

namespace {

void write_header(detail::LeWriter& out, const MlpConfig& c) {
  out.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  out.u32(kCheckpointFormatVersion);
  out.u8(static_cast<std::uint8_t>(c.task.type));
  out.u32(c.input_dim);
  out.u32(c.hidden1);
  out.u32(c.hidden2);
  out.u32(c.output_dim());
  out.f64(c.dropout);
  out.f64(c.bn_epsilon);
  out.f64(c.bn_momentum);
}

std::uint64_t payload_floats(const MlpConfig& c) {
  const std::uint64_t d = c.input_dim, h1 = c.hidden1, h2 = c.hidden2, o = c.output_dim();
  return (h1 * d + h1 + 4 * h1) + (h2 * h1 + h2 + 4 * h2) + (o * h2 + o);
}

MlpConfig read_header(detail::LeReader& in) {
  std::array<char, 4> magic{};
  in.bytes(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw Error(ErrorCode::kMagicMismatch, "byte offset 0: expected MLPC magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::kVersionUnsupported, "byte offset 4: version " + std::to_string(version));
  }
  const std::uint8_t flag = in.u8();
  if (flag > 1) throw Error(ErrorCode::kMagicMismatch, "byte offset 8: task flag " + std::to_string(flag));
  MlpConfig c;
  c.input_dim = in.u32();
  c.hidden1 = in.u32();
  c.hidden2 = in.u32();
  const std::uint32_t out = in.u32();
  if (out == 0 || out > 0xFFFF) throw Error(ErrorCode::kInvalidArgument, "byte offset 21: output dim " + std::to_string(out));
  c.task = TaskKind{static_cast<TaskType>(flag), static_cast<std::uint16_t>(out)};
  c.dropout = in.f64();
  c.bn_epsilon = in.f64();
  c.bn_momentum = in.f64();
  validate_mlp_config(c);
  const std::uint64_t expected = kCheckpointHeaderBytes + 4 * payload_floats(c);
  if (in.file_size() != expected) {
    throw Error(ErrorCode::kShapeHeaderConflict,
                "header dims " + std::to_string(c.input_dim) + "," + std::to_string(c.hidden1) + "," +
                    std::to_string(c.hidden2) + "," + std::to_string(out) + " imply " + std::to_string(expected) +
                    " bytes, file has " + std::to_string(in.file_size()));
  }
  return c;
}

}  // namespace

void save_checkpoint(const MlpParams& params, const std::filesystem::path& path) {
  detail::LeWriter out(path);
  write_header(out, params.config);
  const auto put = [&](std::span<const double> t) {
    for (const double v : t) out.f32(static_cast<float>(v));
  };
  for (std::size_t l = 0; l < 3; ++l) {
    put(params.trainable.dense[l].weight.values());
    put(params.trainable.dense[l].bias);
    if (l < 2) {
      put(params.trainable.norm[l].scale);
      put(params.trainable.norm[l].shift);
      put(params.running[l].mean);
      put(params.running[l].var);
    }
  }
  out.finish();
}

MlpConfig read_checkpoint_header(const std::filesystem::path& path) {
  detail::LeReader in(path);
  return read_header(in);
}

MlpParams load_checkpoint(const std::filesystem::path& path) {
  detail::LeReader in(path);
  const MlpConfig config = read_header(in);
  // Shapes come from a fresh init; every value is then overwritten.
  MlpParams p = init_params(config, 0);
  const auto get = [&](std::span<double> t, bool nonnegative) {
    for (double& v : t) {
      const std::uint64_t at = in.offset();
      v = static_cast<double>(in.f32());
      if (!std::isfinite(v) || (nonnegative && v < 0.0)) {
        throw Error(ErrorCode::kInvalidArgument, "byte offset " + std::to_string(at) + ": invalid parameter value");
      }
    }
  };
  for (std::size_t l = 0; l < 3; ++l) {
    get(p.trainable.dense[l].weight.values(), false);
    get(p.trainable.dense[l].bias, false);
    if (l < 2) {
      get(p.trainable.norm[l].scale, false);
      get(p.trainable.norm[l].shift, false);
      get(p.running[l].mean, false);
      get(p.running[l].var, true);
    }
  }
  return p;
}

}  // namespace cvarprobe
