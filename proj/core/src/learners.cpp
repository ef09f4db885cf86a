#include "civet/learners.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "civet/rng.hpp"

namespace civet {

void LearnerSpec::validate() const {
    if (kind == Kind::linear) return;
    if (depth < 1) throw usage_error("feedforward depth must be at least 1");
    if (width < 1) throw usage_error("feedforward width must be at least 1");
    if (!(learning_rate > 0.0)) throw usage_error("learning_rate must be positive");
    if (batch_size < 1) throw usage_error("batch_size must be at least 1");
    if (max_epochs < 1) throw usage_error("max_epochs must be at least 1");
    if (!(val_fraction >= 0.0 && val_fraction < 0.5)) {
        throw usage_error("val_fraction must lie in [0, 0.5)");
    }
    if (patience < 1) throw usage_error("patience must be at least 1");
}

namespace {

thread_local bool g_used_ridge = false;

void check_xy(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
    if (features.rows() != targets.size()) {
        throw usage_error(fmt::format("feature rows ({}) do not match target length ({})",
                                      features.rows(), targets.size()));
    }
    if (targets.size() < 2) throw data_error("need at least 2 observations to fit a learner");
}

class LinearPredictor final : public Predictor {
public:
    LinearPredictor(double intercept, Eigen::VectorXd slopes)
        : intercept_(intercept), slopes_(std::move(slopes)) {}

    Eigen::VectorXd predict(const Eigen::MatrixXd& features) const override {
        if (features.cols() != slopes_.size()) {
            throw usage_error(fmt::format("predictor expects {} features, got {}",
                                          slopes_.size(), features.cols()));
        }
        return (features * slopes_).array() + intercept_;
    }

private:
    double intercept_;
    Eigen::VectorXd slopes_;
};

class NetPredictor final : public Predictor {
public:
    NetPredictor(FeedforwardNet net, Eigen::Index input_dim)
        : net_(std::move(net)), input_dim_(input_dim) {}

    Eigen::VectorXd predict(const Eigen::MatrixXd& features) const override {
        if (features.cols() != input_dim_) {
            throw usage_error(fmt::format("predictor expects {} features, got {}", input_dim_,
                                          features.cols()));
        }
        return net_.forward(features);
    }

private:
    FeedforwardNet net_;
    Eigen::Index input_dim_;
};

} // namespace

bool linear_fit_used_ridge() { return g_used_ridge; }

PredictorPtr fit_linear(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets) {
    check_xy(features, targets);
    g_used_ridge = false;
    const Eigen::Index n = features.rows();
    const Eigen::Index p = features.cols();

    Eigen::MatrixXd design(n, p + 1);
    design.col(0).setOnes();
    if (p > 0) design.rightCols(p) = features;

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    Eigen::VectorXd coef;
    if (qr.rank() == p + 1) {
        coef = qr.solve(targets);
    } else {
        // Collinear design: a tiny ridge keeps the fit defined without
        // noticeably moving the identified directions.
        g_used_ridge = true;
        Eigen::MatrixXd gram = design.transpose() * design;
        gram.diagonal().array() += 1e-8;
        coef = gram.ldlt().solve(design.transpose() * targets);
    }
    if (!coef.allFinite()) throw numeric_error("linear fit produced non-finite coefficients");
    return std::make_shared<LinearPredictor>(coef[0], coef.tail(p));
}

// ---------------------------------------------------------------------------
// FeedforwardNet

FeedforwardNet::FeedforwardNet(int input_dim, int depth, int width, std::uint64_t seed) {
    if (input_dim < 1) throw usage_error("feedforward input dimension must be at least 1");
    if (depth < 1 || width < 1) throw usage_error("feedforward depth and width must be positive");
    std::mt19937_64 rng(seed);
    auto glorot = [&rng](Eigen::Index rows, Eigen::Index cols) {
        const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::uniform_real_distribution<double> unif(-limit, limit);
        Eigen::MatrixXd w(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = unif(rng);
        }
        return w;
    };

    Eigen::Index in = input_dim;
    for (int l = 0; l < depth; ++l) {
        w_.push_back(glorot(width, in));
        b_.push_back(Eigen::VectorXd::Zero(width));
        in = width;
    }
    w_.push_back(glorot(1, in));
    b_.push_back(Eigen::VectorXd::Zero(1));
}

Eigen::Index FeedforwardNet::parameter_count() const {
    Eigen::Index count = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) count += w_[l].size() + b_[l].size();
    return count;
}

Eigen::VectorXd FeedforwardNet::parameters() const {
    Eigen::VectorXd theta(parameter_count());
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) {
        for (Eigen::Index r = 0; r < w_[l].rows(); ++r) {
            theta.segment(at, w_[l].cols()) = w_[l].row(r).transpose();
            at += w_[l].cols();
        }
        theta.segment(at, b_[l].size()) = b_[l];
        at += b_[l].size();
    }
    return theta;
}

void FeedforwardNet::set_parameters(const Eigen::VectorXd& theta) {
    if (theta.size() != parameter_count()) {
        throw usage_error(fmt::format("parameter vector has length {}, expected {}", theta.size(),
                                      parameter_count()));
    }
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) {
        for (Eigen::Index r = 0; r < w_[l].rows(); ++r) {
            w_[l].row(r) = theta.segment(at, w_[l].cols()).transpose();
            at += w_[l].cols();
        }
        b_[l] = theta.segment(at, b_[l].size());
        at += b_[l].size();
    }
}

Eigen::VectorXd FeedforwardNet::forward(const Eigen::MatrixXd& X) const {
    Eigen::MatrixXd h = X;
    const std::size_t hidden = w_.size() - 1;
    for (std::size_t l = 0; l < hidden; ++l) {
        h = ((h * w_[l].transpose()).rowwise() + b_[l].transpose()).cwiseMax(0.0);
    }
    return (h * w_.back().transpose()).col(0).array() + b_.back()[0];
}

double FeedforwardNet::loss_and_grad(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     Eigen::VectorXd& grad) const {
    const Eigen::Index n = X.rows();
    const std::size_t hidden = w_.size() - 1;

    // Forward pass, keeping each layer's post-activation output.
    std::vector<Eigen::MatrixXd> act(hidden + 1);
    act[0] = X;
    for (std::size_t l = 0; l < hidden; ++l) {
        act[l + 1] = ((act[l] * w_[l].transpose()).rowwise() + b_[l].transpose()).cwiseMax(0.0);
    }
    Eigen::VectorXd pred = (act[hidden] * w_.back().transpose()).col(0).array() + b_.back()[0];
    Eigen::VectorXd resid = pred - y;
    const double loss = resid.squaredNorm() / static_cast<double>(n);

    std::vector<Eigen::MatrixXd> gw(w_.size());
    std::vector<Eigen::VectorXd> gb(w_.size());

    // Output layer, then backpropagate through the ReLU stack. The ReLU
    // derivative is taken as zero at exactly zero.
    Eigen::VectorXd d = resid * (2.0 / static_cast<double>(n));
    gw.back() = d.transpose() * act[hidden];
    gb.back() = Eigen::VectorXd::Constant(1, d.sum());
    Eigen::MatrixXd delta = d * w_.back(); // n x width
    for (std::size_t l = hidden; l-- > 0;) {
        delta = delta.array() * (act[l + 1].array() > 0.0).cast<double>();
        gw[l] = delta.transpose() * act[l];
        gb[l] = delta.colwise().sum().transpose();
        if (l > 0) delta = delta * w_[l];
    }

    grad.resize(parameter_count());
    Eigen::Index at = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) {
        for (Eigen::Index r = 0; r < gw[l].rows(); ++r) {
            grad.segment(at, gw[l].cols()) = gw[l].row(r).transpose();
            at += gw[l].cols();
        }
        grad.segment(at, gb[l].size()) = gb[l];
        at += gb[l].size();
    }
    return loss;
}

double FeedforwardNet::loss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const {
    return (forward(X) - y).squaredNorm() / static_cast<double>(X.rows());
}

// ---------------------------------------------------------------------------
// Training

PredictorPtr fit_feedforward(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                             const LearnerSpec& spec) {
    spec.validate();
    check_xy(features, targets);
    const Eigen::Index n = features.rows();
    const Eigen::Index d = std::max<Eigen::Index>(features.cols(), 1);

    // Zero-feature targets degenerate to a constant fit; give the net one
    // constant column so the shapes stay regular.
    Eigen::MatrixXd X = features;
    if (features.cols() == 0) X = Eigen::MatrixXd::Zero(n, 1);

    FeedforwardNet net(static_cast<int>(d), spec.depth, spec.width,
                       substream_seed(spec.seed, "init"));
    std::mt19937_64 shuffle_rng = substream(spec.seed, "shuffle");

    // Validation split for early stopping. The split is drawn once; training
    // batches are reshuffled every epoch from the same stream.
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), shuffle_rng);
    const Eigen::Index n_val = static_cast<Eigen::Index>(spec.val_fraction * static_cast<double>(n));
    const Eigen::Index n_train = n - n_val;
    if (n_train < 2) throw data_error("validation split leaves fewer than 2 training rows");

    Eigen::MatrixXd x_val(n_val, X.cols());
    Eigen::VectorXd y_val(n_val);
    for (Eigen::Index k = 0; k < n_val; ++k) {
        x_val.row(k) = X.row(idx[static_cast<std::size_t>(k)]);
        y_val[k] = targets[idx[static_cast<std::size_t>(k)]];
    }
    std::vector<Eigen::Index> train_idx(idx.begin() + n_val, idx.end());

    const Eigen::Index batch = std::min<Eigen::Index>(spec.batch_size, n_train);
    Eigen::MatrixXd xb(batch, X.cols());
    Eigen::VectorXd yb(batch);

    Eigen::VectorXd theta = net.parameters();
    Eigen::VectorXd grad(theta.size());
    Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    long step = 0;

    double best_val = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_theta = theta;
    int stale_epochs = 0;

    for (int epoch = 0; epoch < spec.max_epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), shuffle_rng);
        for (Eigen::Index start = 0; start + batch <= n_train; start += batch) {
            for (Eigen::Index k = 0; k < batch; ++k) {
                const Eigen::Index row = train_idx[static_cast<std::size_t>(start + k)];
                xb.row(k) = X.row(row);
                yb[k] = targets[row];
            }
            const double loss = net.loss_and_grad(xb, yb, grad);
            if (!std::isfinite(loss)) {
                throw numeric_error(fmt::format("training loss became non-finite at epoch {}", epoch));
            }
            ++step;
            m = beta1 * m + (1.0 - beta1) * grad;
            v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
            const double mc = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double vc = 1.0 - std::pow(beta2, static_cast<double>(step));
            theta -= (spec.learning_rate / mc) *
                     (m.array() / ((v.array() / vc).sqrt() + adam_eps)).matrix();
            net.set_parameters(theta);
        }

        if (n_val > 0) {
            const double val = net.loss(x_val, y_val);
            if (val < best_val) {
                best_val = val;
                best_theta = theta;
                stale_epochs = 0;
            } else if (++stale_epochs >= spec.patience) {
                break;
            }
        }
    }
    if (n_val > 0) net.set_parameters(best_theta);
    return std::make_shared<NetPredictor>(std::move(net), X.cols());
}

PredictorPtr fit_learner(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                         const LearnerSpec& spec) {
    spec.validate();
    return spec.kind == LearnerSpec::Kind::linear ? fit_linear(features, targets)
                                                  : fit_feedforward(features, targets, spec);
}

} // namespace civet
