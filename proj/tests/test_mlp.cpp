#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "pluvia/mlp.hpp"

using namespace pluvia;

namespace {

// All parameter slots of a network, for finite-difference probing.
std::vector<double*> parameter_slots(TrainedNetwork& net) {
    std::vector<double*> slots;
    for (auto& layer : net.layers) {
        for (Eigen::Index i = 0; i < layer.w.size(); ++i) slots.push_back(layer.w.data() + i);
        for (Eigen::Index i = 0; i < layer.b.size(); ++i) slots.push_back(layer.b.data() + i);
    }
    return slots;
}

std::vector<double> flatten_gradients(const Gradients& g) {
    std::vector<double> flat;
    for (std::size_t k = 0; k < g.dw.size(); ++k) {
        for (Eigen::Index i = 0; i < g.dw[k].size(); ++i) flat.push_back(*(g.dw[k].data() + i));
        for (Eigen::Index i = 0; i < g.db[k].size(); ++i) flat.push_back(*(g.db[k].data() + i));
    }
    return flat;
}

NetworkConfig small_config(std::vector<int> hidden, int input_dim, std::uint64_t seed) {
    NetworkConfig c;
    c.input_dim = input_dim;
    c.hidden_layers = std::move(hidden);
    c.dropout_rate = 0.0;
    c.seed = seed;
    return c;
}

void randomize(TrainedNetwork& net, pluvia::detail::Rng& rng) {
    for (auto& layer : net.layers) {
        for (Eigen::Index i = 0; i < layer.w.size(); ++i) *(layer.w.data() + i) = rng.normal(0.0, 0.8);
        for (Eigen::Index i = 0; i < layer.b.size(); ++i) *(layer.b.data() + i) = rng.normal(0.0, 0.3);
    }
}

// Central finite differences of the loss at step h, compared coordinatewise.
double max_gradcheck_error(TrainedNetwork& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                           double h = 1e-5) {
    const Gradients g = backward_gradients(net, x, y);
    const auto analytic = flatten_gradients(g);
    const auto slots = parameter_slots(net);
    REQUIRE(analytic.size() == slots.size());

    double worst = 0.0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const double saved = *slots[i];
        *slots[i] = saved + h;
        const double fp = loss(net, x, y);
        *slots[i] = saved - h;
        const double fm = loss(net, x, y);
        *slots[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        if (std::abs(a) < 1e-12 && std::abs(fd) < 1e-12) continue;
        // relative error with a floor guarding near-zero gradients
        const double err = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-2});
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace

TEST_CASE("init_network is deterministic and chains shapes") {
    NetworkConfig c = small_config({64, 64, 64}, 4, 77);
    const auto a = init_network(c);
    const auto b = init_network(c);
    REQUIRE(a.layers.size() == 4);
    CHECK(a.layers[0].w.rows() == 4);
    CHECK(a.layers[0].w.cols() == 64);
    CHECK(a.layers[1].w.rows() == 64);
    CHECK(a.layers[2].w.cols() == 64);
    CHECK(a.layers[3].w.rows() == 64);
    CHECK(a.layers[3].w.cols() == 1);
    for (std::size_t k = 0; k < a.layers.size(); ++k) {
        CHECK(a.layers[k].w == b.layers[k].w);
        CHECK(a.layers[k].b.isZero(0.0));
    }
}

TEST_CASE("init_network rejects invalid configs") {
    NetworkConfig c = small_config({8}, 0, 1);
    CHECK_THROWS_AS(init_network(c), ConfigError);
    c.input_dim = 2;
    c.dropout_rate = 1.0;
    CHECK_THROWS_AS(init_network(c), ConfigError);
}

TEST_CASE("forward with zero weights returns the output bias") {
    auto net = init_network(small_config({8, 8}, 3, 5));
    for (auto& layer : net.layers) layer.w.setZero();
    net.layers.back().b(0) = 2.5;
    const Eigen::VectorXd x = Eigen::VectorXd::Random(3);
    CHECK(forward(net, x, ForwardMode::Infer) == 2.5);
}

TEST_CASE("ReLU zeroes negative pre-activations") {
    auto net = init_network(small_config({1}, 1, 5));
    net.layers[0].w(0, 0) = 1.0;
    net.layers[0].b(0) = 0.0;
    net.layers[1].w(0, 0) = 1.0;
    net.layers[1].b(0) = 0.0;
    Eigen::VectorXd x(1);
    x << -3.0;
    CHECK(forward(net, x, ForwardMode::Infer) == 0.0);
    x << 3.0;
    CHECK(forward(net, x, ForwardMode::Infer) == 3.0);
}

TEST_CASE("dropout rate zero makes train and infer forward agree exactly") {
    auto net = init_network(small_config({16, 16}, 4, 11));
    pluvia::detail::Rng rng(3);
    randomize(net, rng);
    const Eigen::VectorXd x = Eigen::VectorXd::Random(4);
    pluvia::detail::Rng mask_rng(9);
    CHECK(forward(net, x, ForwardMode::Train, &mask_rng) == forward(net, x, ForwardMode::Infer));
}

TEST_CASE("loss matches hand arithmetic") {
    auto net = init_network(small_config({4}, 2, 2));
    for (auto& layer : net.layers) layer.w.setZero();

    Eigen::MatrixXd x(2, 2);
    x << 1.0, 0.0, 0.0, 1.0;
    Eigen::VectorXd y(2);
    y << 3.0, 4.0;  // predictions are zero -> MSE (9+16)/2
    CHECK_THAT(loss(net, x, y), Catch::Matchers::WithinRel(12.5, 1e-12));

    y.setZero();
    CHECK(loss(net, x, y) == 0.0);

    // single nonzero weight 2, zero residual, l2_lambda = 1 -> penalty 4
    net.config.l2_lambda = 1.0;
    net.layers[0].w(0, 0) = 2.0;
    Eigen::MatrixXd x0 = Eigen::MatrixXd::Zero(1, 2);
    Eigen::VectorXd y0 = Eigen::VectorXd::Zero(1);
    CHECK_THAT(loss(net, x0, y0), Catch::Matchers::WithinRel(4.0, 1e-12));
}

TEST_CASE("loss rejects an empty batch") {
    auto net = init_network(small_config({4}, 2, 2));
    Eigen::MatrixXd x(0, 2);
    Eigen::VectorXd y(0);
    CHECK_THROWS_AS(loss(net, x, y), DataError);
}

TEST_CASE("analytic gradients match central finite differences at 100 random points") {
    pluvia::detail::Rng rng(20240);
    const std::vector<std::vector<int>> shapes = {{5}, {8, 6}, {10, 8, 4}};
    double worst = 0.0;
    for (int point = 0; point < 100; ++point) {
        auto cfg = small_config(shapes[static_cast<std::size_t>(point) % shapes.size()], 3,
                                static_cast<std::uint64_t>(point));
        cfg.l2_lambda = (point % 4 == 0) ? 0.01 : 0.0;
        auto net = init_network(cfg);
        randomize(net, rng);
        const Eigen::Index rows = 5;
        Eigen::MatrixXd x(rows, 3);
        Eigen::VectorXd y(rows);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
            y(i) = rng.normal(0.0, 2.0);
        }
        worst = std::max(worst, max_gradcheck_error(net, x, y));
    }
    INFO("max relative gradient error " << worst);
    CHECK(worst < 1e-5);
}

TEST_CASE("gradients vanish at a perfect fit with no penalty") {
    auto net = init_network(small_config({4}, 2, 3));
    for (auto& layer : net.layers) layer.w.setZero();
    net.layers.back().b(0) = 1.5;
    Eigen::MatrixXd x(3, 2);
    x << 1, 2, 3, 4, 5, 6;
    Eigen::VectorXd y = Eigen::VectorXd::Constant(3, 1.5);  // residual zero
    const auto g = backward_gradients(net, x, y);
    for (const auto& flat : flatten_gradients(g)) CHECK_THAT(flat, Catch::Matchers::WithinAbs(0.0, 1e-14));
}

TEST_CASE("l2 gradient is 2*lambda*w at zero residual") {
    auto net = init_network(small_config({1}, 1, 3));
    for (auto& layer : net.layers) layer.w.setZero();
    net.config.l2_lambda = 0.7;
    net.layers[0].w(0, 0) = 2.0;
    // input 0 -> hidden pre-activation 0 -> ReLU 0 -> output 0 = target
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(1, 1);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(1);
    const auto g = backward_gradients(net, x, y);
    CHECK_THAT(g.dw[0](0, 0), Catch::Matchers::WithinRel(2.0 * 0.7 * 2.0, 1e-12));
}

TEST_CASE("mask reuse: backward differentiates the masked loss") {
    auto cfg = small_config({6, 6}, 3, 17);
    cfg.dropout_rate = 0.4;
    auto net = init_network(cfg);
    pluvia::detail::Rng rng(21);
    randomize(net, rng);
    Eigen::MatrixXd x(4, 3);
    Eigen::VectorXd y(4);
    for (Eigen::Index i = 0; i < 4; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
        y(i) = rng.normal();
    }
    pluvia::detail::Rng mask_rng(5);
    const auto masks = make_dropout_masks(net, 4, mask_rng);

    const auto g = backward_gradients(net, x, y, &masks);
    const auto analytic = flatten_gradients(g);
    const auto slots = parameter_slots(net);
    double worst = 0.0;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const double saved = *slots[i];
        const double h = 1e-5;
        *slots[i] = saved + h;
        const double fp = loss(net, x, y, &masks);
        *slots[i] = saved - h;
        const double fm = loss(net, x, y, &masks);
        *slots[i] = saved;
        const double fd = (fp - fm) / (2.0 * h);
        if (std::abs(analytic[i]) < 1e-12 && std::abs(fd) < 1e-12) continue;
        worst = std::max(worst, std::abs(analytic[i] - fd) / std::max({std::abs(analytic[i]), std::abs(fd), 1e-2}));
    }
    CHECK(worst < 1e-5);
}

namespace {

FeatureFrame linear_frame(int n, std::uint64_t seed) {
    // y = 2x + 1 on standardized-looking inputs
    FeatureFrame f;
    f.columns = {"X_t"};
    f.x.resize(n, 1);
    f.target.resize(n);
    pluvia::detail::Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        // keep targets positive: predictions are clamped below at zero
        const double x = rng.uniform(-0.45, 2.0);
        f.x(i, 0) = x;
        f.target(i) = 2.0 * x + 1.0;
    }
    f.scaler.mean = {0.0};
    f.scaler.sd = {1.0};
    f.standardized = true;
    for (int i = 0; i < n; ++i) f.week_start.push_back(Date{} + std::chrono::days{7 * i});
    return f;
}

}  // namespace

TEST_CASE("training learns a noiseless linear target") {
    auto frame = linear_frame(128, 99);
    NetworkConfig cfg = small_config({16, 16}, 1, 4242);
    cfg.epochs = 500;
    cfg.batch_size = 32;
    const auto net = train(frame, cfg);
    const auto pred = predict(net, frame);
    const double err = rmse(pred, frame.target);
    INFO("train rmse " << err);
    CHECK(err < 0.05);
}

TEST_CASE("train with zero epochs returns the initialized network") {
    auto frame = linear_frame(64, 7);
    NetworkConfig cfg = small_config({8}, 1, 31);
    cfg.epochs = 0;
    const auto trained = train(frame, cfg);
    const auto fresh = init_network(cfg);
    for (std::size_t k = 0; k < fresh.layers.size(); ++k) {
        CHECK(trained.layers[k].w == fresh.layers[k].w);
        CHECK(trained.layers[k].b == fresh.layers[k].b);
    }
}

TEST_CASE("training trajectories are a pure function of frame and config") {
    auto frame = linear_frame(96, 55);
    NetworkConfig cfg = small_config({12, 12}, 1, 808);
    cfg.epochs = 40;
    cfg.dropout_rate = 0.2;
    const auto a = train(frame, cfg);
    const auto b = train(frame, cfg);
    REQUIRE(a.loss_history.size() == b.loss_history.size());
    for (std::size_t i = 0; i < a.loss_history.size(); ++i) CHECK(a.loss_history[i] == b.loss_history[i]);
    for (std::size_t k = 0; k < a.layers.size(); ++k) CHECK(a.layers[k].w == b.layers[k].w);
}

TEST_CASE("train reports divergence with the epoch") {
    auto frame = linear_frame(64, 3);
    NetworkConfig cfg = small_config({8}, 1, 2);
    cfg.optimizer = Optimizer::Sgd;
    cfg.learning_rate = 1e6;  // guaranteed blow-up
    cfg.epochs = 50;
    REQUIRE_THROWS_WITH(train(frame, cfg), Catch::Matchers::ContainsSubstring("epoch"));
}

TEST_CASE("predict clamps negative outputs at zero") {
    auto net = init_network(small_config({4}, 1, 12));
    for (auto& layer : net.layers) layer.w.setZero();
    net.layers.back().b(0) = -0.3;
    FeatureFrame f;
    f.columns = {};
    f.x = Eigen::MatrixXd::Zero(2, 1);
    f.standardized = true;
    const auto out = predict(net, f);
    REQUIRE(out.size() == 2);
    CHECK(out(0) == 0.0);
    CHECK(out(1) == 0.0);
}

TEST_CASE("predict on an empty frame returns an empty vector") {
    auto net = init_network(small_config({4}, 2, 12));
    FeatureFrame f;
    f.x = Eigen::MatrixXd(0, 2);
    f.standardized = true;
    CHECK(predict(net, f).size() == 0);
}

TEST_CASE("predict rejects mismatched columns") {
    auto frame = linear_frame(64, 5);
    NetworkConfig cfg = small_config({8}, 1, 6);
    cfg.epochs = 1;
    auto net = train(frame, cfg);
    FeatureFrame other = frame;
    other.columns = {"D_t"};
    CHECK_THROWS_AS(predict(net, other), DataError);
}

TEST_CASE("rmse") {
    Eigen::VectorXd a(2), b(2);
    a << 0, 0;
    b << 3, 4;
    CHECK_THAT(rmse(a, b), Catch::Matchers::WithinRel(std::sqrt(12.5), 1e-12));
    CHECK(rmse(b, b) == 0.0);
    Eigen::VectorXd c(3);
    CHECK_THROWS_AS(rmse(a, c), DataError);
    Eigen::VectorXd e0(0);
    CHECK_THROWS_AS(rmse(e0, e0), DataError);
}

TEST_CASE("inverted dropout is unbiased for a single hidden layer") {
    auto cfg = small_config({32}, 4, 3001);
    cfg.dropout_rate = 0.2;
    auto net = init_network(cfg);
    pluvia::detail::Rng rng(77);
    randomize(net, rng);
    Eigen::VectorXd x(4);
    x << 0.3, -1.2, 0.8, 2.0;

    const double reference = forward(net, x, ForwardMode::Infer);
    pluvia::detail::Rng mask_rng(1234);
    const int draws = 20000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < draws; ++i) {
        const double v = forward(net, x, ForwardMode::Train, &mask_rng);
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sumsq / draws - mean * mean) / draws);
    INFO("mean " << mean << " reference " << reference << " se " << se);
    CHECK(std::abs(mean - reference) < 3.0 * se);
}

TEST_CASE("loss is nondecreasing in the l2 penalty at fixed parameters") {
    auto net = init_network(small_config({8, 8}, 3, 21));
    pluvia::detail::Rng rng(4);
    randomize(net, rng);
    Eigen::MatrixXd x(6, 3);
    Eigen::VectorXd y(6);
    for (Eigen::Index i = 0; i < 6; ++i) {
        for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = rng.normal();
        y(i) = rng.normal();
    }
    double prev = -1.0;
    for (double lambda : {0.0, 1e-4, 1e-2, 0.5, 2.0}) {
        net.config.l2_lambda = lambda;
        const double l = loss(net, x, y);
        CHECK(l >= prev);
        prev = l;
    }
}

TEST_CASE("serialized networks reload to identical predictions") {
    auto frame = linear_frame(64, 9);
    NetworkConfig cfg = small_config({8, 8}, 1, 14);
    cfg.epochs = 30;
    const auto net = train(frame, cfg);
    const auto j = network_to_json(net);
    const auto restored = network_from_json(nlohmann::json::parse(j.dump()));
    const auto a = predict(net, frame);
    const auto b = predict(restored, frame);
    REQUIRE(a.size() == b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a(i) == b(i));
}
