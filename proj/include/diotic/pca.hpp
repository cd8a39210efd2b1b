#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "diotic/feature_tensor.hpp"

namespace diotic {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PcaModel {
  Eigen::VectorXd mean;                 // [d]
  RowMatrix components;                 // [k × d], orthonormal rows
  Eigen::VectorXd explained_variance;   // [k], non-increasing

  std::size_t input_dim() const { return static_cast<std::size_t>(mean.size()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(components.rows()); }
};

// Mean-centred thin SVD; components are the top-k right singular vectors,
// each flipped so that its largest-magnitude entry is positive. Explained
// variance uses the n−1 denominator.
inline PcaModel pca_fit(const RowMatrix& rows, std::size_t k) {
  const auto n = static_cast<std::size_t>(rows.rows());
  const auto d = static_cast<std::size_t>(rows.cols());
  if (n <= k) throw std::invalid_argument("pca_fit: need more rows (" + std::to_string(n) + ") than components (" +
                                          std::to_string(k) + ")");
  if (k == 0 || k > d) throw std::invalid_argument("pca_fit: k must be in [1, " + std::to_string(d) + "]");

  PcaModel model;
  model.mean = rows.colwise().mean().transpose();
  const RowMatrix centred = rows.rowwise() - model.mean.transpose();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  const Eigen::MatrixXd& V = svd.matrixV();
  const Eigen::VectorXd& sigma = svd.singularValues();

  model.components.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  model.explained_variance.resize(static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(k); ++i) {
    Eigen::VectorXd v = i < V.cols() ? Eigen::VectorXd(V.col(i)) : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    model.components.row(i) = v.transpose();
    const double s = i < sigma.size() ? sigma(i) : 0.0;
    model.explained_variance(i) = s * s / static_cast<double>(n - 1);
  }
  return model;
}

// (x − mean) · componentsᵀ
inline RowMatrix pca_transform(const PcaModel& model, const RowMatrix& rows) {
  if (static_cast<std::size_t>(rows.cols()) != model.input_dim()) {
    throw DimensionError("pca_transform: model expects " + std::to_string(model.input_dim()) + " columns, got " +
                         std::to_string(rows.cols()));
  }
  return (rows.rowwise() - model.mean.transpose()) * model.components.transpose();
}

inline RowMatrix pca_reconstruct(const PcaModel& model, const RowMatrix& projected) {
  return (projected * model.components).rowwise() + model.mean.transpose();
}

// A [d × T] feature tensor viewed as T rows of d-dimensional observations.
inline RowMatrix frames_as_rows(const FeatureTensor& x) {
  RowMatrix m(static_cast<Eigen::Index>(x.cols), static_cast<Eigen::Index>(x.rows));
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t t = 0; t < x.cols; ++t) m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(r)) = x(r, t);
  return m;
}

inline FeatureTensor pca_transform_features(const PcaModel& model, const FeatureTensor& x) {
  const RowMatrix projected = pca_transform(model, frames_as_rows(x));
  FeatureTensor out(model.output_dim(), x.cols, x.sample_rate_hz, x.unit, x.source);
  out.attributes = x.attributes;
  for (std::size_t t = 0; t < x.cols; ++t)
    for (std::size_t j = 0; j < model.output_dim(); ++j)
      out(j, t) = static_cast<float>(projected(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)));
  return out;
}

// Serialized as three feature tensors: mean [1 × d], components [k × d],
// explained variance [1 × k].
struct PcaTensors {
  FeatureTensor mean, components, variance;
};

inline PcaTensors pca_to_tensors(const PcaModel& m) {
  const std::size_t d = m.input_dim(), k = m.output_dim();
  PcaTensors out{FeatureTensor(1, d, 0.0, "", "pca.mean"), FeatureTensor(k, d, 0.0, "", "pca.components"),
                 FeatureTensor(1, k, 0.0, "", "pca.explained_variance")};
  for (std::size_t j = 0; j < d; ++j) out.mean(0, j) = static_cast<float>(m.mean(static_cast<Eigen::Index>(j)));
  for (std::size_t i = 0; i < k; ++i) {
    out.variance(0, i) = static_cast<float>(m.explained_variance(static_cast<Eigen::Index>(i)));
    for (std::size_t j = 0; j < d; ++j)
      out.components(i, j) = static_cast<float>(m.components(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  }
  return out;
}

inline PcaModel pca_from_tensors(const PcaTensors& t) {
  if (t.mean.rows != 1 || t.variance.rows != 1 || t.components.cols != t.mean.cols ||
      t.components.rows != t.variance.cols) {
    throw DimensionError("pca_from_tensors: inconsistent PCA tensor shapes");
  }
  PcaModel m;
  const auto d = static_cast<Eigen::Index>(t.mean.cols), k = static_cast<Eigen::Index>(t.components.rows);
  m.mean.resize(d);
  m.components.resize(k, d);
  m.explained_variance.resize(k);
  for (Eigen::Index j = 0; j < d; ++j) m.mean(j) = t.mean(0, static_cast<std::size_t>(j));
  for (Eigen::Index i = 0; i < k; ++i) {
    m.explained_variance(i) = t.variance(0, static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < d; ++j)
      m.components(i, j) = t.components(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  }
  return m;
}

}  // namespace diotic
