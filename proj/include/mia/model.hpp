// Minimal fully connected classifier: seeded training with mini-batch
// gradient descent, softmax prediction, pre-softmax logit extraction, log
// loss, analytic gradients w.r.t. parameters and inputs, incremental updates,
// and bit-exact persistence.
#pragma once

#include <Eigen/Dense>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mia/common.hpp"
#include "mia/data.hpp"
#include "json.hpp"

namespace mia {

enum class Activation { kTanh, kRelu };

struct ModelSpec {
  std::vector<int> layer_sizes;  // input dim, hidden dims..., class count
  Activation hidden_activation = Activation::kTanh;

  int input_dim() const { return layer_sizes.front(); }
  int class_count() const { return layer_sizes.back(); }
  int layer_count() const { return static_cast<int>(layer_sizes.size()) - 1; }

  void validate() const {
    if (layer_sizes.size() < 2) throw ConfigError("ModelSpec needs at least 2 layer sizes");
    for (int s : layer_sizes)
      if (s < 1) throw ConfigError("ModelSpec layer sizes must be positive");
    if (class_count() < 2) throw ConfigError("ModelSpec needs at least 2 classes");
  }

  bool operator==(const ModelSpec&) const = default;

  nlohmann::json to_json() const {
    return {{"layer_sizes", layer_sizes},
            {"hidden_activation", hidden_activation == Activation::kTanh ? "tanh" : "relu"}};
  }
  static ModelSpec from_json(const nlohmann::json& j) {
    ModelSpec spec;
    spec.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    const std::string act = j.at("hidden_activation").get<std::string>();
    if (act == "tanh") spec.hidden_activation = Activation::kTanh;
    else if (act == "relu") spec.hidden_activation = Activation::kRelu;
    else throw ConfigError("unknown activation '" + act + "'");
    return spec;
  }
};

struct TrainingConfig {
  int epochs = 1000;
  int batch_size = 10;
  double learning_rate = 0.1;
  double l2_coefficient = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (learning_rate < 0) throw ConfigError("learning_rate must be non-negative");
    if (l2_coefficient < 0) throw ConfigError("l2_coefficient must be non-negative");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"l2_coefficient", l2_coefficient},
            {"seed", seed}};
  }
  static TrainingConfig from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.l2_coefficient = j.at("l2_coefficient").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  }
};

struct ModelParams {
  ModelSpec spec;
  std::vector<Eigen::MatrixXd> weights;  // weights[l]: layer_sizes[l+1] x layer_sizes[l]
  std::vector<Eigen::VectorXd> biases;

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }

  double weight_l2_norm() const {
    double sq = 0.0;
    for (const auto& w : weights) sq += w.squaredNorm();
    return std::sqrt(sq);
  }
};

constexpr double kProbabilityFloor = 1e-12;

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

inline ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams params;
  params.spec = spec;
  Rng rng(seed);
  for (int l = 0; l < spec.layer_count(); ++l) {
    const int rows = spec.layer_sizes[l + 1];
    const int cols = spec.layer_sizes[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = rng.uniform(-bound, bound);
    params.weights.push_back(std::move(w));
    params.biases.push_back(Eigen::VectorXd::Zero(rows));
  }
  return params;
}

namespace detail {

inline void check_input_dim(const ModelParams& params, const Eigen::VectorXd& x) {
  if (x.size() != params.spec.input_dim())
    throw ConfigError("feature dimension " + std::to_string(x.size()) +
                      " does not match model input " + std::to_string(params.spec.input_dim()));
}

inline double activate(double z, Activation act) {
  return act == Activation::kTanh ? std::tanh(z) : (z > 0.0 ? z : 0.0);
}

// Derivative expressed through pre-activation z and activation a.
inline double activate_deriv(double z, double a, Activation act) {
  return act == Activation::kTanh ? 1.0 - a * a : (z > 0.0 ? 1.0 : 0.0);
}

struct ForwardTrace {
  std::vector<Eigen::VectorXd> pre;   // z per layer
  std::vector<Eigen::VectorXd> post;  // activations; post[0] = input
  Eigen::VectorXd probs;
};

inline ForwardTrace forward(const ModelParams& params, const Eigen::VectorXd& x) {
  check_input_dim(params, x);
  const int layers = params.spec.layer_count();
  ForwardTrace t;
  t.pre.resize(layers);
  t.post.resize(layers + 1);
  t.post[0] = x;
  for (int l = 0; l < layers; ++l) {
    t.pre[l] = params.weights[l] * t.post[l] + params.biases[l];
    if (l + 1 < layers) {
      Eigen::VectorXd a(t.pre[l].size());
      for (Eigen::Index i = 0; i < a.size(); ++i)
        a[i] = activate(t.pre[l][i], params.spec.hidden_activation);
      t.post[l + 1] = std::move(a);
    } else {
      t.post[l + 1] = t.pre[l];  // logits
    }
  }
  t.probs = softmax(t.pre[layers - 1]);
  return t;
}

}  // namespace detail

inline Eigen::VectorXd last_layer_output(const ModelParams& params, const Eigen::VectorXd& x) {
  return detail::forward(params, x).pre.back();
}

inline Eigen::VectorXd predict(const ModelParams& params, const Eigen::VectorXd& x) {
  return detail::forward(params, x).probs;
}

inline double predicted_probability(const ModelParams& params, const Eigen::VectorXd& x,
                                    int label) {
  if (label < 0 || label >= params.spec.class_count())
    throw ConfigError("label out of range: " + std::to_string(label));
  return detail::forward(params, x).probs[label];
}

inline double log_loss(const ModelParams& params, const Record& record) {
  const double p = predicted_probability(params, record.features, record.label);
  return -std::log(std::max(p, kProbabilityFloor));
}

// ---------------------------------------------------------------------------
// Gradients

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

inline Gradients zero_gradients(const ModelParams& params) {
  Gradients g;
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    g.weights.push_back(Eigen::MatrixXd::Zero(params.weights[l].rows(), params.weights[l].cols()));
    g.biases.push_back(Eigen::VectorXd::Zero(params.biases[l].size()));
  }
  return g;
}

// Mean cross-entropy gradient over the batch plus the L2 term; also reports
// the batch mean log loss (without the penalty).
inline Gradients param_gradients(const ModelParams& params,
                                 const std::vector<const Record*>& batch, double l2_coefficient,
                                 double* mean_loss = nullptr) {
  if (batch.empty()) throw ConfigError("param_gradients: empty batch");
  const int layers = params.spec.layer_count();
  Gradients g = zero_gradients(params);
  double loss_sum = 0.0;
  for (const Record* rec : batch) {
    const auto t = detail::forward(params, rec->features);
    loss_sum += -std::log(std::max(t.probs[rec->label], kProbabilityFloor));
    Eigen::VectorXd delta = t.probs;
    delta[rec->label] -= 1.0;  // d(-ln p_y)/dz for softmax
    for (int l = layers - 1; l >= 0; --l) {
      g.weights[l].noalias() += delta * t.post[l].transpose();
      g.biases[l] += delta;
      if (l > 0) {
        Eigen::VectorXd up = params.weights[l].transpose() * delta;
        delta.resize(up.size());
        for (Eigen::Index i = 0; i < up.size(); ++i)
          delta[i] = up[i] * detail::activate_deriv(t.pre[l - 1][i], t.post[l][i],
                                                    params.spec.hidden_activation);
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (int l = 0; l < layers; ++l) {
    g.weights[l] *= inv;
    g.biases[l] *= inv;
    if (l2_coefficient > 0.0) g.weights[l] += l2_coefficient * params.weights[l];
  }
  if (mean_loss) *mean_loss = loss_sum * inv;
  return g;
}

inline void apply_gradients(ModelParams& params, const Gradients& g, double learning_rate) {
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    params.weights[l] -= learning_rate * g.weights[l];
    params.biases[l] -= learning_rate * g.biases[l];
  }
}

// ---------------------------------------------------------------------------
// Training

inline void check_dataset_for(const ModelSpec& spec, const Dataset& dataset) {
  if (dataset.records.empty()) throw ConfigError("train: empty dataset");
  if (dataset.feature_dim() != spec.input_dim())
    throw ConfigError("dataset feature dim " + std::to_string(dataset.feature_dim()) +
                      " does not match model input " + std::to_string(spec.input_dim()));
  for (const auto& r : dataset.records)
    if (r.label < 0 || r.label >= spec.class_count())
      throw ConfigError("record '" + r.id + "' has label " + std::to_string(r.label) +
                        " outside class count " + std::to_string(spec.class_count()));
}

// One epoch = one full pass in a seed-shuffled order; the trailing partial
// batch is processed. Deterministic given (dataset order, seed).
inline ModelParams train(const Dataset& dataset, const ModelSpec& spec,
                         const TrainingConfig& config,
                         std::vector<double>* epoch_losses = nullptr) {
  spec.validate();
  config.validate();
  check_dataset_for(spec, dataset);
  if (static_cast<std::size_t>(config.batch_size) > dataset.size())
    throw ConfigError("batch_size " + std::to_string(config.batch_size) +
                      " exceeds dataset size " + std::to_string(dataset.size()));

  ModelParams params = init_params(spec, hash64(config.seed, 0));
  Rng shuffle_rng(hash64(config.seed, 1));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (epoch_losses) epoch_losses->clear();

  std::vector<const Record*> batch;
  batch.reserve(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&dataset.records[order[i]]);
      double batch_loss = 0.0;
      const Gradients g = param_gradients(params, batch, config.l2_coefficient, &batch_loss);
      loss_sum += batch_loss * static_cast<double>(batch.size());
      seen += batch.size();
      apply_gradients(params, g, config.learning_rate);
    }
    const double epoch_loss = loss_sum / static_cast<double>(seen);
    if (!std::isfinite(epoch_loss))
      throw DivergenceError("training diverged: non-finite loss at epoch " +
                                std::to_string(epoch + 1),
                            epoch + 1);
    if (epoch_losses) epoch_losses->push_back(epoch_loss);
  }
  if (!params.all_finite())
    throw DivergenceError("training diverged: non-finite parameters after epoch " +
                              std::to_string(config.epochs),
                          config.epochs);
  return params;
}

// Incremental refinement: config.epochs full-batch gradient steps on `batch`
// only. Used to fold one extra record into an already trained model.
inline ModelParams update(const ModelParams& params, const Dataset& batch,
                          const TrainingConfig& config) {
  config.validate();
  if (batch.records.empty()) throw ConfigError("update: empty batch");
  check_dataset_for(params.spec, batch);
  ModelParams out = params;
  std::vector<const Record*> all;
  all.reserve(batch.size());
  for (const auto& r : batch.records) all.push_back(&r);
  for (int step = 0; step < config.epochs; ++step) {
    double loss = 0.0;
    const Gradients g = param_gradients(out, all, config.l2_coefficient, &loss);
    if (!std::isfinite(loss))
      throw DivergenceError("update diverged: non-finite loss at step " + std::to_string(step + 1),
                            step + 1);
    apply_gradients(out, g, config.learning_rate);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Input-space gradient of a scalar objective of the prediction vector.

struct InputObjective {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;  // dObjective/dprobs
};

inline Eigen::VectorXd input_gradient(const ModelParams& params, const Eigen::VectorXd& x,
                                      const InputObjective& objective) {
  const auto t = detail::forward(params, x);
  const int layers = params.spec.layer_count();
  const Eigen::VectorXd gp = objective.grad(t.probs);
  if (gp.size() != t.probs.size())
    throw ConfigError("objective gradient size does not match class count");
  // Softmax Jacobian: (diag(p) - p p^T) gp.
  Eigen::VectorXd delta = t.probs.cwiseProduct(gp) - t.probs.dot(gp) * t.probs;
  for (int l = layers - 1; l >= 1; --l) {
    Eigen::VectorXd up = params.weights[l].transpose() * delta;
    delta.resize(up.size());
    for (Eigen::Index i = 0; i < up.size(); ++i)
      delta[i] = up[i] * detail::activate_deriv(t.pre[l - 1][i], t.post[l][i],
                                                params.spec.hidden_activation);
  }
  return params.weights[0].transpose() * delta;
}

// Gradient of the predicted probability of `label` w.r.t. the input.
inline Eigen::VectorXd label_probability_input_gradient(const ModelParams& params,
                                                        const Eigen::VectorXd& x, int label) {
  const int classes = params.spec.class_count();
  if (label < 0 || label >= classes) throw ConfigError("label out of range");
  InputObjective obj;
  obj.value = [label](const Eigen::VectorXd& p) { return p[label]; };
  obj.grad = [label, classes](const Eigen::VectorXd&) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(classes);
    g[label] = 1.0;
    return g;
  };
  return input_gradient(params, x, obj);
}

// ---------------------------------------------------------------------------
// Evaluation helpers

inline double accuracy(const ModelParams& params, const Dataset& dataset) {
  if (dataset.records.empty()) throw ConfigError("accuracy: empty dataset");
  std::size_t hits = 0;
  for (const auto& r : dataset.records) {
    Eigen::Index argmax = 0;
    detail::forward(params, r.features).probs.maxCoeff(&argmax);
    if (static_cast<int>(argmax) == r.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

inline double mean_log_loss(const ModelParams& params, const Dataset& dataset) {
  if (dataset.records.empty()) throw ConfigError("mean_log_loss: empty dataset");
  double sum = 0.0;
  for (const auto& r : dataset.records) sum += log_loss(params, r);
  return sum / static_cast<double>(dataset.size());
}

// ---------------------------------------------------------------------------
// Persistence: self-describing file, bit-exact round trip. Layout: magic,
// little-endian u32 JSON header length, JSON header (spec + training config),
// then raw doubles per layer (weights in Eigen storage order, then biases).

constexpr char kModelMagic[8] = {'M', 'I', 'A', 'M', 'D', 'L', '1', '\n'};

inline void save_model(const std::string& path, const ModelParams& params,
                       const TrainingConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file: " + path);
  nlohmann::json header = {{"spec", params.spec.to_json()}, {"config", config.to_json()}};
  const std::string head = header.dump();
  out.write(kModelMagic, sizeof(kModelMagic));
  const std::uint32_t len = static_cast<std::uint32_t>(head.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    const auto& w = params.weights[l];
    out.write(reinterpret_cast<const char*>(w.data()),
              static_cast<std::streamsize>(sizeof(double) * w.size()));
    const auto& b = params.biases[l];
    out.write(reinterpret_cast<const char*>(b.data()),
              static_cast<std::streamsize>(sizeof(double) * b.size()));
  }
  if (!out) throw IoError("failed writing model file: " + path);
}

struct SavedModel {
  ModelParams params;
  TrainingConfig config;
};

inline SavedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
    throw IoError("not a model file: " + path);
  std::uint32_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string head(len, '\0');
  in.read(head.data(), len);
  if (!in) throw IoError("truncated model file: " + path);
  const nlohmann::json header = nlohmann::json::parse(head);
  SavedModel saved;
  saved.params.spec = ModelSpec::from_json(header.at("spec"));
  saved.config = TrainingConfig::from_json(header.at("config"));
  const auto& spec = saved.params.spec;
  for (int l = 0; l < spec.layer_count(); ++l) {
    Eigen::MatrixXd w(spec.layer_sizes[l + 1], spec.layer_sizes[l]);
    in.read(reinterpret_cast<char*>(w.data()),
            static_cast<std::streamsize>(sizeof(double) * w.size()));
    Eigen::VectorXd b(spec.layer_sizes[l + 1]);
    in.read(reinterpret_cast<char*>(b.data()),
            static_cast<std::streamsize>(sizeof(double) * b.size()));
    if (!in) throw IoError("truncated model file: " + path);
    saved.params.weights.push_back(std::move(w));
    saved.params.biases.push_back(std::move(b));
  }
  return saved;
}

}  // namespace mia
