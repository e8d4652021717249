#include "umct/losses.hpp"

#include <algorithm>
#include <cmath>

#include "umct/errors.hpp"

namespace umct {
namespace {

template <typename T>
void check_normalized(const Tensor<T>& t, const char* what) {
  const auto& s = t.shape();
  const std::int64_t N = s[0], C = s[1], S = shape_numel(s) / (N * C);
  const T* x = t.data().data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t i = 0; i < S; ++i) {
      double sum = 0.0;
      for (std::int64_t c = 0; c < C; ++c) sum += x[(n * C + c) * S + i];
      if (std::abs(sum - 1.0) > 1e-3)
        throw ParameterError(std::string("dice_loss: ") + what + " does not sum to 1 over classes (got " +
                             std::to_string(sum) + ")");
    }
}

}  // namespace

template <typename T>
LossValue<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target, double eps) {
  if (pred.shape() != target.shape())
    throw ShapeError("dice_loss: pred " + shape_str(pred.shape()) + " vs target " + shape_str(target.shape()));
  if (pred.ndim() < 3 || pred.dim(1) < 2)
    throw ShapeError("dice_loss: expected [N,C,...] with C >= 2, got " + shape_str(pred.shape()));
  check_normalized(pred, "pred");
  check_normalized(target, "target");
  const auto& s = pred.shape();
  const std::int64_t N = s[0], C = s[1], S = shape_numel(s) / (N * C);
  const T* p = pred.data().data();
  const T* t = target.data().data();

  // Per (sample, class): intersection and denominator.
  std::vector<double> inter(static_cast<std::size_t>(N * C)), denom(static_cast<std::size_t>(N * C));
  LossValue<T> out;
  out.per_class.assign(static_cast<std::size_t>(C - 1), 0.0);
  double total = 0.0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 1; c < C; ++c) {
      const T* pc = p + (n * C + c) * S;
      const T* tc = t + (n * C + c) * S;
      double i_sum = 0.0, p_sum = 0.0, t_sum = 0.0;
      for (std::int64_t i = 0; i < S; ++i) {
        i_sum += static_cast<double>(pc[i]) * tc[i];
        p_sum += pc[i];
        t_sum += tc[i];
      }
      const std::size_t k = static_cast<std::size_t>(n * C + c);
      inter[k] = i_sum;
      denom[k] = p_sum + t_sum;
      const double l = 1.0 - (2.0 * i_sum + eps) / (p_sum + t_sum + eps);
      out.per_class[static_cast<std::size_t>(c - 1)] += l / static_cast<double>(N);
      total += l;
    }
  const double scale = 1.0 / static_cast<double>(N * (C - 1));
  out.loss = Tensor<T>(Shape{}, static_cast<T>(total * scale));
  check_finite(out.loss.data(), "dice_loss");

  if (needs_record({&pred})) {
    auto pi = pred.impl(), ti = target.impl(), oi = out.loss.impl();
    Tape<T>::active()->record("dice_loss", {pi}, oi, [pi, ti, oi, inter, denom, N, C, S, eps, scale]() {
      auto& g = grad_buffer(*pi);
      const double go = static_cast<double>(oi->grad[0]) * scale;
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 1; c < C; ++c) {
          const std::size_t k = static_cast<std::size_t>(n * C + c);
          const double d = denom[k] + eps;
          const double a = -2.0 / d * go;
          const double b = (2.0 * inter[k] + eps) / (d * d) * go;
          const T* tc = ti->data.data() + (n * C + c) * S;
          T* gc = g.data() + (n * C + c) * S;
          for (std::int64_t i = 0; i < S; ++i) gc[i] += static_cast<T>(a * tc[i] + b);
        }
    });
  }
  return out;
}

template LossValue<float> dice_loss(const Tensor<float>&, const Tensor<float>&, double);
template LossValue<double> dice_loss(const Tensor<double>&, const Tensor<double>&, double);

double dsc(const LabelVolume& pred, const LabelVolume& target, int class_id) {
  if (pred.shape() != target.shape())
    throw ShapeError("dsc: shapes " + shape_str(pred.shape()) + " and " + shape_str(target.shape()) + " differ");
  std::int64_t both = 0, np = 0, nt = 0;
  const auto p = pred.data();
  const auto t = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] == class_id, b = t[i] == class_id;
    np += a;
    nt += b;
    both += a && b;
  }
  if (np + nt == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + nt);
}

LabelVolume argmax(const Volume& scores) {
  if (scores.rank() != 4) throw ShapeError("argmax: expected a (C,D,H,W) score map, got " + shape_str(scores.shape()));
  const auto e = scores.extent();
  LabelVolume out(Shape{e[0], e[1], e[2]}, 0, scores.spacing());
  const std::int64_t C = scores.channels(), S = scores.spatial_size();
  const auto x = scores.data();
  auto y = out.data();
  for (std::int64_t i = 0; i < S; ++i) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < C; ++c)
      if (x[c * S + i] > x[best * S + i]) best = c;
    y[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

Volume one_hot(const LabelVolume& labels, int num_classes) {
  if (labels.rank() != 3) throw ShapeError("one_hot: expected a (D,H,W) label map");
  const auto e = labels.extent();
  Volume out(Shape{num_classes, e[0], e[1], e[2]}, 0.0f, labels.spacing());
  const std::int64_t S = labels.spatial_size();
  const auto l = labels.data();
  auto y = out.data();
  for (std::int64_t i = 0; i < S; ++i) {
    if (l[i] >= num_classes)
      throw ParameterError("one_hot: label " + std::to_string(l[i]) + " exceeds " + std::to_string(num_classes - 1));
    y[l[i] * S + i] = 1.0f;
  }
  return out;
}

std::string to_string(EnsembleMode m) { return m == EnsembleMode::Mean ? "mean" : "majority"; }

EnsembleMode parse_ensemble_mode(std::string_view s) {
  if (s == "mean") return EnsembleMode::Mean;
  if (s == "majority") return EnsembleMode::Majority;
  throw ConfigError("ensemble mode must be mean or majority, got '" + std::string(s) + "'");
}

LabelVolume ensemble(const std::vector<Volume>& predictions, EnsembleMode mode) {
  if (predictions.empty()) throw ParameterError("ensemble: no predictions");
  const Volume& first = predictions.front();
  for (const auto& p : predictions)
    if (p.shape() != first.shape()) throw ShapeError("ensemble: prediction shapes differ");
  if (mode == EnsembleMode::Mean) {
    Volume mean(first.shape(), 0.0f, first.spacing());
    auto m = mean.data();
    std::vector<double> acc(m.size(), 0.0);
    for (const auto& p : predictions) {
      const auto x = p.data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
    }
    for (std::size_t i = 0; i < acc.size(); ++i) m[i] = static_cast<float>(acc[i] / predictions.size());
    return argmax(mean);
  }
  const std::int64_t C = first.channels();
  std::vector<LabelVolume> votes;
  for (const auto& p : predictions) votes.push_back(argmax(p));
  LabelVolume out = votes.front();
  auto y = out.data();
  std::vector<int> count(static_cast<std::size_t>(C));
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::fill(count.begin(), count.end(), 0);
    for (const auto& v : votes) ++count[v.data()[i]];
    y[i] = static_cast<std::uint8_t>(std::max_element(count.begin(), count.end()) - count.begin());
  }
  return out;
}

}  // namespace umct
