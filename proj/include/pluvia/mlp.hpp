#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pluvia/detail/rng.hpp"
#include "pluvia/errors.hpp"
#include "pluvia/ingest.hpp"

namespace pluvia {

enum class Optimizer { Adam, Sgd };

struct NetworkConfig {
    int input_dim = 0;
    std::vector<int> hidden_layers = {64, 64, 64};
    double dropout_rate = 0.2;
    double l2_lambda = 0.0;
    std::uint64_t seed = 0;
    double learning_rate = 1e-3;
    int epochs = 500;
    int batch_size = 32;
    Optimizer optimizer = Optimizer::Adam;

    void validate() const {
        if (input_dim <= 0) throw ConfigError("NetworkConfig: input_dim must be positive");
        for (int w : hidden_layers)
            if (w < 1) throw ConfigError("NetworkConfig: hidden layer widths must be >= 1");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
            throw ConfigError("NetworkConfig: dropout_rate must lie in [0,1)");
        if (l2_lambda < 0.0) throw ConfigError("NetworkConfig: l2_lambda must be non-negative");
        if (learning_rate <= 0.0) throw ConfigError("NetworkConfig: learning_rate must be positive");
        if (epochs < 0) throw ConfigError("NetworkConfig: epochs must be non-negative");
        if (batch_size < 1) throw ConfigError("NetworkConfig: batch_size must be >= 1");
    }
};

struct Layer {
    Eigen::MatrixXd w;  // fan_in x fan_out
    Eigen::VectorXd b;  // fan_out
};

// Dense ReLU network with a single linear output unit.
struct TrainedNetwork {
    std::vector<Layer> layers;  // hidden layers then the output layer
    NetworkConfig config;
    std::vector<std::string> columns;  // feature columns used in training
    Scaler scaler;                     // standardization applied to inputs
    double final_loss = 0.0;
    std::vector<double> loss_history;

    int input_dim() const { return static_cast<int>(layers.front().w.rows()); }
    std::size_t n_hidden() const { return layers.size() - 1; }
};

enum class ForwardMode { Train, Infer };

// One 0-or-1/(1-p) mask per hidden layer (inverted dropout: survivors are
// scaled at train time so inference needs no adjustment).
struct DropoutMasks {
    std::vector<Eigen::MatrixXd> m;
};

inline TrainedNetwork init_network(const NetworkConfig& config) {
    config.validate();
    TrainedNetwork net;
    net.config = config;

    std::vector<int> dims;
    dims.push_back(config.input_dim);
    for (int h : config.hidden_layers) dims.push_back(h);
    dims.push_back(1);

    detail::Rng rng(config.seed);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        Layer layer;
        const int fan_in = dims[k];
        const int fan_out = dims[k + 1];
        layer.w.resize(fan_in, fan_out);
        const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));  // He init for ReLU
        for (Eigen::Index i = 0; i < layer.w.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.w.cols(); ++j) layer.w(i, j) = scale * rng.normal();
        layer.b = Eigen::VectorXd::Zero(fan_out);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

inline DropoutMasks make_dropout_masks(const TrainedNetwork& net, Eigen::Index batch_rows, detail::Rng& rng) {
    DropoutMasks masks;
    const double p = net.config.dropout_rate;
    const double keep_scale = (p > 0.0) ? 1.0 / (1.0 - p) : 1.0;
    for (std::size_t k = 0; k < net.n_hidden(); ++k) {
        Eigen::MatrixXd m(batch_rows, net.layers[k].w.cols());
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.bernoulli(p) ? 0.0 : keep_scale;
        masks.m.push_back(std::move(m));
    }
    return masks;
}

namespace detail_mlp {

struct ForwardCache {
    std::vector<Eigen::MatrixXd> z;  // pre-activations per layer
    std::vector<Eigen::MatrixXd> a;  // post-activation (and post-dropout) per layer; a[0] is the input
    Eigen::VectorXd yhat;
};

inline ForwardCache forward_batch(const TrainedNetwork& net, const Eigen::MatrixXd& x,
                                  const DropoutMasks* masks) {
    if (x.cols() != net.layers.front().w.rows()) {
        throw DataError("forward: input dimension mismatch (got " + std::to_string(x.cols()) + ", expected " +
                        std::to_string(net.layers.front().w.rows()) + ")");
    }
    if (masks && masks->m.size() != net.n_hidden()) throw DataError("forward: dropout mask count mismatch");

    ForwardCache cache;
    cache.a.push_back(x);
    for (std::size_t k = 0; k < net.n_hidden(); ++k) {
        Eigen::MatrixXd z = (cache.a.back() * net.layers[k].w).rowwise() + net.layers[k].b.transpose();
        Eigen::MatrixXd a = z.cwiseMax(0.0);  // ReLU
        if (masks) {
            if (masks->m[k].rows() != a.rows() || masks->m[k].cols() != a.cols()) {
                throw DataError("forward: dropout mask shape mismatch");
            }
            a = a.cwiseProduct(masks->m[k]);
        }
        cache.z.push_back(std::move(z));
        cache.a.push_back(std::move(a));
    }
    const auto& out = net.layers.back();
    cache.yhat = ((cache.a.back() * out.w).col(0).array() + out.b(0)).matrix();
    return cache;
}

}  // namespace detail_mlp

// Single-row forward pass. Train mode draws fresh dropout masks from `rng`.
inline double forward(const TrainedNetwork& net, const Eigen::VectorXd& x, ForwardMode mode,
                      detail::Rng* rng = nullptr) {
    Eigen::MatrixXd row = x.transpose();
    if (mode == ForwardMode::Train && net.config.dropout_rate > 0.0) {
        if (!rng) throw ConfigError("forward: train mode with dropout requires an rng");
        DropoutMasks masks = make_dropout_masks(net, 1, *rng);
        return detail_mlp::forward_batch(net, row, &masks).yhat(0);
    }
    return detail_mlp::forward_batch(net, row, nullptr).yhat(0);
}

// Mean squared error over the batch plus the L2 weight penalty
// (biases are not penalized).
inline double loss(const TrainedNetwork& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                   const DropoutMasks* masks = nullptr) {
    if (x.rows() == 0) throw DataError("loss: empty batch");
    if (x.rows() != y.size()) throw DataError("loss: batch size mismatch between rows and targets");
    const auto cache = detail_mlp::forward_batch(net, x, masks);
    const double mse = (cache.yhat - y).squaredNorm() / static_cast<double>(x.rows());
    double penalty = 0.0;
    if (net.config.l2_lambda > 0.0) {
        for (const auto& layer : net.layers) penalty += layer.w.squaredNorm();
        penalty *= net.config.l2_lambda;
    }
    return mse + penalty;
}

struct Gradients {
    std::vector<Eigen::MatrixXd> dw;
    std::vector<Eigen::VectorXd> db;
};

// Reverse-mode gradients of `loss` with respect to every weight and bias.
// The ReLU subgradient at exactly 0 is taken as 0. The same masks used in
// the forward pass being differentiated must be supplied.
inline Gradients backward_gradients(const TrainedNetwork& net, const Eigen::MatrixXd& x,
                                    const Eigen::VectorXd& y, const DropoutMasks* masks = nullptr) {
    if (x.rows() == 0) throw DataError("backward_gradients: empty batch");
    if (x.rows() != y.size()) throw DataError("backward_gradients: batch size mismatch");
    const auto cache = detail_mlp::forward_batch(net, x, masks);
    const double inv_b = 1.0 / static_cast<double>(x.rows());
    const double lambda = net.config.l2_lambda;

    Gradients g;
    g.dw.resize(net.layers.size());
    g.db.resize(net.layers.size());

    // output layer
    Eigen::VectorXd delta = 2.0 * inv_b * (cache.yhat - y);
    const std::size_t last = net.layers.size() - 1;
    g.dw[last] = cache.a.back().transpose() * delta;
    if (lambda > 0.0) g.dw[last] += 2.0 * lambda * net.layers[last].w;
    g.db[last] = Eigen::VectorXd::Constant(1, delta.sum());

    // hidden layers, walking backwards
    Eigen::MatrixXd grad_a = delta * net.layers[last].w.transpose();  // dL/da for the last hidden layer
    for (std::size_t k = net.n_hidden(); k-- > 0;) {
        Eigen::MatrixXd grad_z = grad_a;
        if (masks) grad_z = grad_z.cwiseProduct(masks->m[k]);
        grad_z = grad_z.cwiseProduct((cache.z[k].array() > 0.0).cast<double>().matrix());
        g.dw[k] = cache.a[k].transpose() * grad_z;
        if (lambda > 0.0) g.dw[k] += 2.0 * lambda * net.layers[k].w;
        g.db[k] = grad_z.colwise().sum().transpose();
        if (k > 0) grad_a = grad_z * net.layers[k].w.transpose();
    }
    return g;
}

// Mini-batch training; adaptive-moment updates by default, plain SGD behind
// config.optimizer. The whole trajectory is a pure function of
// (frame, config): batch order and dropout masks come from config.seed.
inline TrainedNetwork train(const FeatureFrame& frame, const NetworkConfig& config) {
    config.validate();
    if (frame.x.cols() != config.input_dim) {
        throw ConfigError("train: frame has " + std::to_string(frame.x.cols()) + " columns but config.input_dim is " +
                          std::to_string(config.input_dim));
    }
    if (!frame.has_target()) throw DataError("train: frame has no target vector");
    if (frame.rows() < config.batch_size) throw DataError("train: fewer rows than batch_size");

    TrainedNetwork net = init_network(config);
    net.columns = frame.columns;
    net.scaler = frame.scaler;

    detail::Rng rng(detail::derive_seed(config.seed, 0x7261696e));  // training stream

    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<Eigen::MatrixXd> mw, vw;
    std::vector<Eigen::VectorXd> mb, vb;
    if (config.optimizer == Optimizer::Adam) {
        for (const auto& layer : net.layers) {
            mw.push_back(Eigen::MatrixXd::Zero(layer.w.rows(), layer.w.cols()));
            vw.push_back(Eigen::MatrixXd::Zero(layer.w.rows(), layer.w.cols()));
            mb.push_back(Eigen::VectorXd::Zero(layer.b.size()));
            vb.push_back(Eigen::VectorXd::Zero(layer.b.size()));
        }
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(frame.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        Eigen::Index consumed = 0;
        while (consumed < frame.rows()) {
            const Eigen::Index b = std::min<Eigen::Index>(config.batch_size, frame.rows() - consumed);
            Eigen::MatrixXd xb(b, frame.x.cols());
            Eigen::VectorXd yb(b);
            for (Eigen::Index i = 0; i < b; ++i) {
                xb.row(i) = frame.x.row(order[static_cast<std::size_t>(consumed + i)]);
                yb(i) = frame.target(order[static_cast<std::size_t>(consumed + i)]);
            }
            consumed += b;

            DropoutMasks masks;
            const DropoutMasks* mask_ptr = nullptr;
            if (config.dropout_rate > 0.0) {
                masks = make_dropout_masks(net, b, rng);
                mask_ptr = &masks;
            }

            const double batch_loss = loss(net, xb, yb, mask_ptr);
            if (!std::isfinite(batch_loss)) {
                throw NumericError("train: loss diverged (non-finite) at epoch " + std::to_string(epoch));
            }
            epoch_loss += batch_loss * static_cast<double>(b);

            const Gradients g = backward_gradients(net, xb, yb, mask_ptr);
            ++step;
            if (config.optimizer == Optimizer::Adam) {
                const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
                const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
                for (std::size_t k = 0; k < net.layers.size(); ++k) {
                    mw[k] = beta1 * mw[k] + (1.0 - beta1) * g.dw[k];
                    vw[k] = beta2 * vw[k] + (1.0 - beta2) * g.dw[k].cwiseProduct(g.dw[k]);
                    mb[k] = beta1 * mb[k] + (1.0 - beta1) * g.db[k];
                    vb[k] = beta2 * vb[k] + (1.0 - beta2) * g.db[k].cwiseProduct(g.db[k]);
                    net.layers[k].w -=
                        (config.learning_rate * (mw[k] / bc1).array() / ((vw[k] / bc2).array().sqrt() + eps)).matrix();
                    net.layers[k].b -=
                        (config.learning_rate * (mb[k] / bc1).array() / ((vb[k] / bc2).array().sqrt() + eps)).matrix();
                }
            } else {
                for (std::size_t k = 0; k < net.layers.size(); ++k) {
                    net.layers[k].w -= config.learning_rate * g.dw[k];
                    net.layers[k].b -= config.learning_rate * g.db[k];
                }
            }
        }
        net.loss_history.push_back(epoch_loss / static_cast<double>(frame.rows()));
    }
    net.final_loss = net.loss_history.empty() ? loss(net, frame.x, frame.target) : net.loss_history.back();
    return net;
}

// Infer-mode predictions, clamped below at zero (claim frequency is
// non-negative). Accepts raw frames and standardizes them with the
// network's stored scaler; standardized frames are used as-is.
inline Eigen::VectorXd predict(const TrainedNetwork& net, const FeatureFrame& frame) {
    if (!net.columns.empty() && frame.columns != net.columns) {
        std::string msg = "predict: column mismatch (expected";
        for (const auto& c : net.columns) msg += " " + c;
        msg += ")";
        throw DataError(msg);
    }
    if (frame.rows() == 0) return Eigen::VectorXd();
    Eigen::MatrixXd x = frame.x;
    if (!frame.standardized && !net.scaler.mean.empty()) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            x.col(c) = (x.col(c).array() - net.scaler.mean[static_cast<std::size_t>(c)]) /
                       net.scaler.sd[static_cast<std::size_t>(c)];
        }
    }
    Eigen::VectorXd yhat = detail_mlp::forward_batch(net, x, nullptr).yhat;
    return yhat.cwiseMax(0.0);
}

inline double rmse(const Eigen::VectorXd& pred, const Eigen::VectorXd& actual) {
    if (pred.size() != actual.size()) throw DataError("rmse: length mismatch");
    if (pred.size() == 0) throw DataError("rmse: empty vectors");
    return std::sqrt((pred - actual).squaredNorm() / static_cast<double>(pred.size()));
}

// --- serialization -----------------------------------------------------------

inline nlohmann::json network_to_json(const TrainedNetwork& net) {
    nlohmann::json j;
    j["config"] = {{"input_dim", net.config.input_dim},
                   {"hidden_layers", net.config.hidden_layers},
                   {"dropout_rate", net.config.dropout_rate},
                   {"l2_lambda", net.config.l2_lambda},
                   {"seed", net.config.seed},
                   {"learning_rate", net.config.learning_rate},
                   {"epochs", net.config.epochs},
                   {"batch_size", net.config.batch_size},
                   {"optimizer", net.config.optimizer == Optimizer::Adam ? "adam" : "sgd"}};
    j["columns"] = net.columns;
    j["scaler"] = {{"mean", net.scaler.mean}, {"sd", net.scaler.sd}};
    j["final_loss"] = net.final_loss;
    j["loss_history"] = net.loss_history;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : net.layers) {
        std::vector<double> w;  // row-major
        w.reserve(static_cast<std::size_t>(layer.w.size()));
        for (Eigen::Index i = 0; i < layer.w.rows(); ++i)
            for (Eigen::Index jx = 0; jx < layer.w.cols(); ++jx) w.push_back(layer.w(i, jx));
        std::vector<double> b(layer.b.data(), layer.b.data() + layer.b.size());
        layers.push_back({{"rows", layer.w.rows()}, {"cols", layer.w.cols()}, {"w", w}, {"b", b}});
    }
    j["layers"] = layers;
    return j;
}

inline TrainedNetwork network_from_json(const nlohmann::json& j) {
    TrainedNetwork net;
    const auto& c = j.at("config");
    net.config.input_dim = c.at("input_dim").get<int>();
    net.config.hidden_layers = c.at("hidden_layers").get<std::vector<int>>();
    net.config.dropout_rate = c.at("dropout_rate").get<double>();
    net.config.l2_lambda = c.at("l2_lambda").get<double>();
    net.config.seed = c.at("seed").get<std::uint64_t>();
    net.config.learning_rate = c.at("learning_rate").get<double>();
    net.config.epochs = c.at("epochs").get<int>();
    net.config.batch_size = c.at("batch_size").get<int>();
    net.config.optimizer = c.at("optimizer").get<std::string>() == "sgd" ? Optimizer::Sgd : Optimizer::Adam;
    net.columns = j.at("columns").get<std::vector<std::string>>();
    net.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
    net.scaler.sd = j.at("scaler").at("sd").get<std::vector<double>>();
    net.final_loss = j.at("final_loss").get<double>();
    net.loss_history = j.at("loss_history").get<std::vector<double>>();
    for (const auto& lj : j.at("layers")) {
        Layer layer;
        const auto rows = lj.at("rows").get<Eigen::Index>();
        const auto cols = lj.at("cols").get<Eigen::Index>();
        const auto w = lj.at("w").get<std::vector<double>>();
        const auto b = lj.at("b").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != rows * cols || static_cast<Eigen::Index>(b.size()) != cols) {
            throw DataError("network_from_json: layer shape mismatch");
        }
        layer.w.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index jx = 0; jx < cols; ++jx) layer.w(i, jx) = w[static_cast<std::size_t>(i * cols + jx)];
        layer.b = Eigen::Map<const Eigen::VectorXd>(b.data(), cols);
        net.layers.push_back(std::move(layer));
    }
    if (net.layers.empty()) throw DataError("network_from_json: no layers");
    for (std::size_t k = 0; k + 1 < net.layers.size(); ++k) {
        if (net.layers[k].w.cols() != net.layers[k + 1].w.rows()) {
            throw DataError("network_from_json: layer shapes do not chain");
        }
    }
    if (net.layers.back().w.cols() != 1) throw DataError("network_from_json: output layer must have one unit");
    return net;
}

}  // namespace pluvia
