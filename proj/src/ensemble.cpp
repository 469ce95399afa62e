#include "dlrenkf/ensemble.hpp"

namespace dlrenkf {

void FullEnsemble::validate() const {
  if (params.cols() != states.cols())
    throw ConfigError("FullEnsemble: states and params disagree on P");
  if (particle_count() < 2)
    throw ConfigError("FullEnsemble: need at least two particles");
  if (!states.allFinite() || !params.allFinite())
    throw NonFinite("FullEnsemble: non-finite entry detected");
}

SampleStats sample_stats(const FullEnsemble& ens) {
  const Eigen::Index d = ens.state_dim();
  const Eigen::Index n = ens.param_dim();
  const Eigen::Index p = ens.particle_count();
  if (p < 2) throw ConfigError("sample_stats: need at least two particles");

  SampleStats out;
  out.mean.resize(d + n);
  out.anomalies.resize(d + n, p);
  out.mean.head(d) = ens.states.rowwise().mean();
  out.anomalies.topRows(d) = ens.states.colwise() - out.mean.head(d);
  if (n > 0) {
    out.mean.tail(n) = ens.params.rowwise().mean();
    out.anomalies.bottomRows(n) = ens.params.colwise() - out.mean.tail(n);
  }
  return out;
}

}  // namespace dlrenkf
