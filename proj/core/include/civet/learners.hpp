// learners.hpp: the two regression learners used for nuisance fitting.
//
// "linear" is ordinary least squares with an intercept and a tiny-ridge
// fallback on rank deficiency. "feedforward" is a fully connected ReLU
// network trained with Adam on squared error, with a held-out validation
// split and early stopping; it is deliberately self-contained (no external
// ML dependency) and deterministic given its seed.
#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "civet/errors.hpp"

namespace civet {

struct LearnerSpec {
    enum class Kind { linear, feedforward };
    Kind kind = Kind::linear;

    // Feedforward hyperparameters; ignored by the linear learner.
    int depth = 2;                // hidden layers
    int width = 50;               // units per hidden layer
    double learning_rate = 5e-4;
    int batch_size = 256;
    int max_epochs = 1000;
    double val_fraction = 0.05;   // held-out share for early stopping
    int patience = 5;             // epochs without validation improvement
    std::uint64_t seed = 0;

    void validate() const;
};

class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Eigen::VectorXd predict(const Eigen::MatrixXd& features) const = 0;
};

using PredictorPtr = std::shared_ptr<const Predictor>;

// OLS with intercept. Zero-column feature matrices are allowed and produce
// the intercept-only (mean) fit. On a rank-deficient design the solver falls
// back to ridge with penalty 1e-8 and remembers that it did (the fallback is
// observable for logging, never silent corruption).
PredictorPtr fit_linear(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets);

// Returns true when the most recent fit_linear call on this thread used the
// ridge fallback. Cheap cooperative signal for callers that want to warn.
bool linear_fit_used_ridge();

// Fully connected ReLU network, squared-error loss, Adam updates, early
// stopping on a validation split. Deterministic given spec.seed. Throws
// numeric_error if the training loss goes non-finite.
PredictorPtr fit_feedforward(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                             const LearnerSpec& spec);

PredictorPtr fit_learner(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets,
                         const LearnerSpec& spec);

// The bare network, exposed so tests can run an analytic-vs-finite-difference
// gradient check without training machinery in the way. Parameters are
// flattened in layer order (weights row-major, then biases).
class FeedforwardNet {
public:
    FeedforwardNet(int input_dim, int depth, int width, std::uint64_t seed);

    Eigen::Index parameter_count() const;
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& theta);

    Eigen::VectorXd forward(const Eigen::MatrixXd& X) const;

    // Mean squared error over the batch and its gradient with respect to all
    // parameters (flattened as in parameters()).
    double loss_and_grad(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         Eigen::VectorXd& grad) const;
    double loss(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) const;

    const std::vector<Eigen::MatrixXd>& weights() const { return w_; }
    const std::vector<Eigen::VectorXd>& biases() const { return b_; }

private:
    friend PredictorPtr fit_feedforward(const Eigen::MatrixXd&, const Eigen::VectorXd&,
                                        const LearnerSpec&);
    std::vector<Eigen::MatrixXd> w_; // w_[l]: out x in
    std::vector<Eigen::VectorXd> b_;
};

} // namespace civet
