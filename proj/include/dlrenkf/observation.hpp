#pragma once

#include <memory>

#include <Eigen/Dense>

#include "dlrenkf/errors.hpp"

namespace dlrenkf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Linear observation operator H. Kept structural so full-state observation
// (H = I at k = d) never materialises a d x d matrix.
class LinearOperator {
 public:
  static LinearOperator identity(Eigen::Index d) {
    LinearOperator h;
    h.kind_ = Kind::identity;
    h.rows_ = d;
    h.cols_ = d;
    return h;
  }
  static LinearOperator dense(Matrix h) {
    LinearOperator op;
    op.kind_ = Kind::dense;
    op.rows_ = h.rows();
    op.cols_ = h.cols();
    op.mat_ = std::move(h);
    return op;
  }

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  bool is_identity() const { return kind_ == Kind::identity; }

  Matrix apply(const Matrix& x) const {
    return kind_ == Kind::identity ? x : mat_ * x;
  }
  Vector apply(const Vector& x) const {
    return kind_ == Kind::identity ? x : Vector(mat_ * x);
  }
  Matrix apply_transpose(const Matrix& y) const {
    return kind_ == Kind::identity ? y : Matrix(mat_.transpose() * y);
  }
  Matrix to_dense() const {
    return kind_ == Kind::identity ? Matrix(Matrix::Identity(rows_, cols_)) : mat_;
  }

 private:
  enum class Kind { identity, dense };
  Kind kind_ = Kind::identity;
  Eigen::Index rows_ = 0, cols_ = 0;
  Matrix mat_;
};

// Observation noise covariance, SPD by construction (Cholesky checked).
class NoiseCovariance {
 public:
  static NoiseCovariance scaled_identity(Eigen::Index k, double value) {
    if (!(value > 0.0)) throw NotSPD("NoiseCovariance: nonpositive variance");
    NoiseCovariance g;
    g.kind_ = Kind::scaled_identity;
    g.k_ = k;
    g.scale_ = value;
    return g;
  }
  static NoiseCovariance diagonal(Vector diag) {
    if (diag.size() == 0 || diag.minCoeff() <= 0.0)
      throw NotSPD("NoiseCovariance: nonpositive diagonal");
    NoiseCovariance g;
    g.kind_ = Kind::diagonal;
    g.k_ = diag.size();
    g.diag_ = std::move(diag);
    return g;
  }
  static NoiseCovariance dense(Matrix m) {
    NoiseCovariance g;
    g.kind_ = Kind::dense;
    g.k_ = m.rows();
    g.mat_ = std::move(m);
    g.llt_ = std::make_shared<Eigen::LLT<Matrix>>(g.mat_);
    if (g.llt_->info() != Eigen::Success)
      throw NotSPD("NoiseCovariance: Cholesky failed");
    return g;
  }

  Eigen::Index dim() const { return k_; }

  // Gamma / factor (the rescaling Gamma_tilde = Gamma / dt)
  NoiseCovariance scaled(double inv_factor) const {
    switch (kind_) {
      case Kind::scaled_identity:
        return scaled_identity(k_, scale_ * inv_factor);
      case Kind::diagonal:
        return diagonal(diag_ * inv_factor);
      case Kind::dense:
      default:
        return dense(mat_ * inv_factor);
    }
  }

  Matrix solve(const Matrix& b) const {
    switch (kind_) {
      case Kind::scaled_identity:
        return b / scale_;
      case Kind::diagonal:
        return diag_.cwiseInverse().asDiagonal() * b;
      case Kind::dense:
      default:
        return llt_->solve(b);
    }
  }

  // Gamma^{1/2} b via the (lower) Cholesky factor
  Matrix sqrt_apply(const Matrix& b) const {
    switch (kind_) {
      case Kind::scaled_identity:
        return std::sqrt(scale_) * b;
      case Kind::diagonal:
        return diag_.cwiseSqrt().asDiagonal() * b;
      case Kind::dense:
      default:
        return llt_->matrixL() * b;
    }
  }

  Matrix to_dense() const {
    switch (kind_) {
      case Kind::scaled_identity:
        return scale_ * Matrix::Identity(k_, k_);
      case Kind::diagonal:
        return Matrix(diag_.asDiagonal());
      case Kind::dense:
      default:
        return mat_;
    }
  }

 private:
  enum class Kind { scaled_identity, diagonal, dense };
  Kind kind_ = Kind::scaled_identity;
  Eigen::Index k_ = 0;
  double scale_ = 1.0;
  Vector diag_;
  Matrix mat_;
  std::shared_ptr<Eigen::LLT<Matrix>> llt_;
};

struct ObservationModel {
  LinearOperator h;
  NoiseCovariance gamma;

  ObservationModel(LinearOperator h_, NoiseCovariance gamma_)
      : h(std::move(h_)), gamma(std::move(gamma_)) {
    if (h.rows() != gamma.dim())
      throw ConfigError("ObservationModel: H rows and Gamma dimension differ");
  }
};

}  // namespace dlrenkf
