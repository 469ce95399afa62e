#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dlrenkf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Contiguous row range of the state vector holding one physical variable;
// low-rank truncation operates per block.
struct VariableBlock {
  std::string name;
  Eigen::Index row_begin = 0;
  Eigen::Index row_end = 0;  // exclusive
  Eigen::Index rows() const { return row_end - row_begin; }
};

// Drift interface f(t, x, theta) evaluated column-wise over a particle
// ensemble. Implementations must be pure given (t, states, params).
class ForwardModel {
 public:
  virtual ~ForwardModel() = default;

  virtual Eigen::Index state_dim() const = 0;
  virtual Eigen::Index param_dim() const = 0;

  virtual std::vector<VariableBlock> blocks() const {
    return {VariableBlock{"state", 0, state_dim()}};
  }

  // out(:, p) = f(t, states(:, p), params(:, p)); out is state_dim x P
  virtual void drift(double t, const Matrix& states, const Matrix& params,
                     Matrix& out) const = 0;

  // Row provider for hyper-reduced evaluation: returns state row i across all
  // particles without materialising the full ensemble.
  using StateRowFn = std::function<Eigen::RowVectorXd(Eigen::Index)>;

  // out(r, p) = f(...)_{rows[r]} for particle p. The default assembles every
  // state row; models with stencil-local dynamics override it.
  virtual void drift_rows(double t, const std::vector<Eigen::Index>& rows,
                          const StateRowFn& state_row, const Matrix& params,
                          Matrix& out) const;
};

inline Matrix eval_drift(const ForwardModel& model, double t,
                         const Matrix& states, const Matrix& params) {
  Matrix out(states.rows(), states.cols());
  model.drift(t, states, params, out);
  return out;
}

// Wrapper counting evaluated drift entries, used to assert hyper-reduction
// evaluation budgets.
class CountingModel : public ForwardModel {
 public:
  explicit CountingModel(const ForwardModel& inner) : inner_(inner) {}

  Eigen::Index state_dim() const override { return inner_.state_dim(); }
  Eigen::Index param_dim() const override { return inner_.param_dim(); }
  std::vector<VariableBlock> blocks() const override { return inner_.blocks(); }

  void drift(double t, const Matrix& states, const Matrix& params,
             Matrix& out) const override {
    entries_ += states.rows() * states.cols();
    inner_.drift(t, states, params, out);
  }

  void drift_rows(double t, const std::vector<Eigen::Index>& rows,
                  const StateRowFn& state_row, const Matrix& params,
                  Matrix& out) const override {
    entries_ += static_cast<long long>(rows.size()) * params.cols();
    inner_.drift_rows(t, rows, state_row, params, out);
  }

  long long entries() const { return entries_; }
  void reset() { entries_ = 0; }

 private:
  const ForwardModel& inner_;
  mutable long long entries_ = 0;
};

}  // namespace dlrenkf
