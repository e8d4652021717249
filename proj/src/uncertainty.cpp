#include "umct/uncertainty.hpp"

#include <cmath>

#include "umct/errors.hpp"

namespace umct {

template <typename T>
Tensor<T> mean_of(const std::vector<Tensor<T>>& samples) {
  if (samples.empty()) throw ParameterError("mean_of: no samples");
  const Shape& s = samples.front().shape();
  std::vector<double> acc(samples.front().numel(), 0.0);
  for (const auto& t : samples) {
    if (t.shape() != s) throw ShapeError("mean_of: " + shape_str(t.shape()) + " vs " + shape_str(s));
    const auto x = t.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
  }
  Tensor<T> out(s);
  auto y = out.mutable_data();
  const double k = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < acc.size(); ++i) y[i] = static_cast<T>(acc[i] / k);
  return out;
}

template <typename T>
McPrediction<T> mc_sample_predictions(const BasicViewModel<T>& model, const Tensor<T>& x, int K,
                                      const RngStream& rng) {
  if (K < 2) throw ParameterError("MC sampling needs K >= 2, got " + std::to_string(K));
  McPrediction<T> out;
  out.samples = sample_through_view(model, x, K, rng);
  out.mean = mean_of(out.samples);
  return out;
}

template <typename T>
UncertaintyReport<T> epistemic_uncertainty(const std::vector<Tensor<T>>& samples, int view_index) {
  if (samples.size() < 2) throw ParameterError("epistemic_uncertainty needs K >= 2 samples");
  const Shape& s = samples.front().shape();
  if (s.size() != 5) throw ShapeError("epistemic_uncertainty: expected [N,C,D,H,W], got " + shape_str(s));
  for (const auto& t : samples)
    if (t.shape() != s) throw ShapeError("epistemic_uncertainty: " + shape_str(t.shape()) + " vs " + shape_str(s));
  const std::int64_t N = s[0], C = s[1], S = s[2] * s[3] * s[4];
  const double K = static_cast<double>(samples.size());

  UncertaintyReport<T> r;
  r.view_index = view_index;
  r.voxelwise = Tensor<T>(Shape{N, s[2], s[3], s[4]});
  auto u = r.voxelwise.mutable_data();
  std::vector<double> mean(static_cast<std::size_t>(S)), var(static_cast<std::size_t>(S));
  for (std::int64_t n = 0; n < N; ++n) {
    std::fill(var.begin(), var.end(), 0.0);
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t off = (n * C + c) * S;
      // Shifted by the first sample: identical samples give exactly zero.
      const T* x0 = samples.front().data().data() + off;
      std::fill(mean.begin(), mean.end(), 0.0);
      for (const auto& t : samples) {
        const T* x = t.data().data() + off;
        for (std::int64_t i = 0; i < S; ++i) mean[i] += double(x[i]) - double(x0[i]);
      }
      for (auto& m : mean) m /= K;
      for (const auto& t : samples) {
        const T* x = t.data().data() + off;
        for (std::int64_t i = 0; i < S; ++i) {
          const double d = double(x[i]) - double(x0[i]) - mean[i];
          var[i] += d * d / K;
        }
      }
    }
    double total = 0.0;
    for (std::int64_t i = 0; i < S; ++i) {
      u[n * S + i] = static_cast<T>(var[i]);
      total += var[i];
    }
    r.scalar.push_back(total);
    r.confidence.push_back(confidence(total));
  }
  return r;
}

double confidence(double u) {
  if (!(u >= 0.0) || !std::isfinite(u))
    throw ParameterError("confidence: uncertainty must be finite and >= 0, got " + std::to_string(u));
  return 1.0 / (u + kConfidenceEps);
}

std::string to_string(FusionMode m) { return m == FusionMode::Ulf ? "ulf" : "uniform"; }

FusionMode parse_fusion_mode(std::string_view s) {
  if (s == "ulf") return FusionMode::Ulf;
  if (s == "uniform") return FusionMode::Uniform;
  throw ConfigError("fusion mode must be ulf or uniform, got '" + std::string(s) + "'");
}

template <typename T>
PseudoLabel<T> fuse_pseudo_label(int target_view, const std::vector<Tensor<T>>& predictions,
                                 const std::vector<std::vector<double>>& confidences, FusionMode mode) {
  const int V = static_cast<int>(predictions.size());
  if (V < 2) throw ConfigError("pseudo-label fusion needs at least 2 views, got " + std::to_string(V));
  if (target_view < 0 || target_view >= V) throw ParameterError("fusion target view out of range");
  if (mode == FusionMode::Ulf && static_cast<int>(confidences.size()) != V)
    throw ParameterError("fusion needs one confidence list per view");
  const Shape& s = predictions.front().shape();
  for (const auto& p : predictions)
    if (p.shape() != s) throw ShapeError("fusion: prediction shapes differ");
  const std::int64_t N = s[0], len = shape_numel(s) / N;

  PseudoLabel<T> out;
  out.target_view = target_view;
  out.soft_label = Tensor<T>(s);
  auto y = out.soft_label.mutable_data();
  std::vector<double> acc(static_cast<std::size_t>(len));
  for (std::int64_t n = 0; n < N; ++n) {
    std::vector<FusionWeight> w;
    double total = 0.0;
    for (int j = 0; j < V; ++j) {
      if (j == target_view) continue;
      double c = 1.0;
      if (mode == FusionMode::Ulf) {
        c = confidences[j].at(static_cast<std::size_t>(n));
        if (!(c > 0.0) || !std::isfinite(c)) throw ParameterError("fusion confidences must be positive and finite");
      }
      w.push_back({j, c});
      total += c;
    }
    for (auto& fw : w) fw.weight /= total;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (const auto& fw : w) {
      const T* x = predictions[fw.view].data().data() + n * len;
      for (std::int64_t i = 0; i < len; ++i) acc[i] += fw.weight * x[i];
    }
    for (std::int64_t i = 0; i < len; ++i) y[n * len + i] = static_cast<T>(acc[i]);
    out.weights.push_back(std::move(w));
  }
  return out;
}

#define UMCT_INSTANTIATE_UNCERTAINTY(T)                                                                          \
  template Tensor<T> mean_of(const std::vector<Tensor<T>>&);                                                     \
  template McPrediction<T> mc_sample_predictions(const BasicViewModel<T>&, const Tensor<T>&, int,               \
                                                 const RngStream&);                                             \
  template UncertaintyReport<T> epistemic_uncertainty(const std::vector<Tensor<T>>&, int);                      \
  template PseudoLabel<T> fuse_pseudo_label(int, const std::vector<Tensor<T>>&,                                 \
                                            const std::vector<std::vector<double>>&, FusionMode);

UMCT_INSTANTIATE_UNCERTAINTY(float)
UMCT_INSTANTIATE_UNCERTAINTY(double)

}  // namespace umct
