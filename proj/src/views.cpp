#include "umct/views.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace umct {
namespace {

constexpr std::array<std::array<int, 3>, 6> kPermutations{{
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};

void check_permutation(const std::array<int, 3>& p) {
  std::array<bool, 3> seen{};
  for (int a : p) {
    if (a < 0 || a > 2 || seen[a]) throw ParameterError("view transform: not a permutation of (0,1,2)");
    seen[a] = true;
  }
}

}  // namespace

ViewTransform::ViewTransform(std::array<int, 3> permutation, std::array<bool, 3> flips)
    : perm_(permutation), flips_(flips) {
  check_permutation(perm_);
}

ViewTransform ViewTransform::from_id(int id) {
  if (id < 0 || id >= 48) throw ParameterError("view transform id must lie in [0, 48), got " + std::to_string(id));
  return ViewTransform(kPermutations[id / 8], {(id & 1) != 0, (id & 2) != 0, (id & 4) != 0});
}

std::vector<ViewTransform> ViewTransform::all() {
  std::vector<ViewTransform> out;
  for (int id = 0; id < 48; ++id) out.push_back(from_id(id));
  return out;
}

int ViewTransform::id() const {
  const auto it = std::find(kPermutations.begin(), kPermutations.end(), perm_);
  const int p = static_cast<int>(it - kPermutations.begin());
  return p * 8 + (flips_[0] ? 1 : 0) + (flips_[1] ? 2 : 0) + (flips_[2] ? 4 : 0);
}

std::string ViewTransform::to_string() const {
  std::ostringstream os;
  os << '(' << perm_[0] << ' ' << perm_[1] << ' ' << perm_[2] << ';' << flips_[0] << ' ' << flips_[1] << ' '
     << flips_[2] << ')';
  return os.str();
}

ViewTransform ViewTransform::parse(std::string_view text) {
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c)) || (!s.empty() && s.back() != ' ')) s.push_back(c);
  while (!s.empty() && s.back() == ' ') s.pop_back();
  if (s.empty()) throw ParameterError("empty view transform");
  if (s.front() != '(') {
    std::size_t used = 0;
    int id = -1;
    try {
      id = std::stoi(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size()) throw ParameterError("cannot parse view transform '" + s + "'");
    return from_id(id);
  }
  if (s.back() != ')') throw ParameterError("cannot parse view transform '" + s + "'");
  std::string body = s.substr(1, s.size() - 2);
  std::replace(body.begin(), body.end(), ',', ' ');
  const auto semi = body.find(';');
  if (semi == std::string::npos) throw ParameterError("view transform needs 'perm;flips': '" + s + "'");
  std::istringstream ps(body.substr(0, semi)), fs(body.substr(semi + 1));
  std::array<int, 3> p{};
  std::array<bool, 3> f{};
  for (auto& a : p)
    if (!(ps >> a)) throw ParameterError("view transform permutation needs 3 axes: '" + s + "'");
  for (auto& b : f) {
    int v = 0;
    if (!(fs >> v) || (v != 0 && v != 1)) throw ParameterError("view transform flips must be 0/1: '" + s + "'");
    b = v == 1;
  }
  return ViewTransform(p, f);
}

Extent3 ViewTransform::map_extent(const Extent3& in) const {
  return {in[perm_[0]], in[perm_[1]], in[perm_[2]]};
}

template <typename T>
VoxelGrid<T> ViewTransform::apply(const VoxelGrid<T>& v) const {
  if (is_identity()) return v;
  const Extent3 in = v.extent();
  const Extent3 out = map_extent(in);
  const std::int64_t in_stride[3] = {in[1] * in[2], in[2], 1};
  std::int64_t stride[3], base = 0;
  for (int k = 0; k < 3; ++k) {
    stride[k] = flips_[k] ? -in_stride[perm_[k]] : in_stride[perm_[k]];
    if (flips_[k]) base += (out[k] - 1) * in_stride[perm_[k]];
  }
  Shape shape = v.rank() == 4 ? Shape{v.channels(), out[0], out[1], out[2]} : Shape{out[0], out[1], out[2]};
  VoxelGrid<T> result(shape, T{}, v.spacing());
  const Spacing3& sp = v.spacing();
  result.set_spacing({sp[perm_[0]], sp[perm_[1]], sp[perm_[2]]});
  const std::int64_t S = v.spatial_size();
  auto src = v.data();
  auto dst = result.data();
  for (std::int64_t c = 0; c < v.channels(); ++c) {
    std::int64_t o = c * S;
    for (std::int64_t a = 0; a < out[0]; ++a)
      for (std::int64_t b = 0; b < out[1]; ++b)
        for (std::int64_t e = 0; e < out[2]; ++e)
          dst[o++] = src[c * S + base + a * stride[0] + b * stride[1] + e * stride[2]];
  }
  return result;
}

template VoxelGrid<float> ViewTransform::apply(const VoxelGrid<float>&) const;
template VoxelGrid<double> ViewTransform::apply(const VoxelGrid<double>&) const;
template VoxelGrid<std::uint8_t> ViewTransform::apply(const VoxelGrid<std::uint8_t>&) const;

ViewTransform inverse(const ViewTransform& t) {
  std::array<int, 3> p{};
  std::array<bool, 3> f{};
  for (int k = 0; k < 3; ++k) {
    const int j = t.permutation()[k];
    p[j] = k;
    f[j] = t.flips()[k];
  }
  return ViewTransform(p, f);
}

ViewTransform compose(const ViewTransform& outer, const ViewTransform& inner) {
  std::array<int, 3> p{};
  std::array<bool, 3> f{};
  for (int k = 0; k < 3; ++k) {
    const int l = outer.permutation()[k];
    p[k] = inner.permutation()[l];
    f[k] = outer.flips()[k] != inner.flips()[l];
  }
  return ViewTransform(p, f);
}

ViewSet standard_view_set(int n) {
  const ViewTransform axial({0, 1, 2}, {false, false, false});
  const ViewTransform second({1, 2, 0}, {false, false, false});
  const ViewTransform third({2, 0, 1}, {false, false, false});
  switch (n) {
    case 2:
      return {axial, second};
    case 3:
      return {axial, second, third};
    case 6: {
      ViewSet out{axial, second, third};
      for (int i = 0; i < 3; ++i) out.emplace_back(out[i].permutation(), std::array<bool, 3>{false, false, true});
      return out;
    }
    default:
      throw ParameterError("standard view sets exist for 2, 3 or 6 views, got " + std::to_string(n));
  }
}

void validate_view_set(const ViewSet& views) {
  if (views.empty()) throw ConfigError("view set is empty");
  if (!views.front().is_identity()) throw ConfigError("view 0 must be the identity transform");
  std::set<int> ids;
  for (const auto& v : views)
    if (!ids.insert(v.id()).second) throw ConfigError("view set contains transform " + v.to_string() + " twice");
}

std::string view_set_to_string(const ViewSet& views) {
  std::string out;
  for (std::size_t i = 0; i < views.size(); ++i) out += (i ? "," : "") + views[i].to_string();
  return out;
}

ViewSet parse_view_set(std::string_view text) {
  ViewSet out;
  std::string cur;
  int depth = 0;
  auto flush = [&]() {
    if (cur.find_first_not_of(' ') != std::string::npos) out.push_back(ViewTransform::parse(cur));
    cur.clear();
  };
  for (char c : text) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      flush();
      continue;
    }
    cur.push_back(c);
  }
  flush();
  return out;
}

}  // namespace umct
