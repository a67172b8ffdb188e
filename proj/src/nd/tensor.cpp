#include "cirm/nd/tensor.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "cirm/error.hpp"

namespace cirm {

ParamTensor::ParamTensor(std::string name_, std::vector<std::size_t> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                  std::multiplies<>());
  values.assign(n, 0.0);
  grad.assign(n, 0.0);
}

void ParamTensor::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

std::string ParamTensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

void ParamTensor::validate() const {
  std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                  std::multiplies<>());
  if (n != values.size() || n != grad.size()) {
    throw ShapeError("parameter '" + name + "' shape " + shape_string() +
                     " disagrees with value/grad lengths");
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw ValueError("parameter '" + name + "' holds a non-finite value");
    }
  }
}

void zero_grads(const ParamRefs& params) {
  for (ParamTensor* p : params) p->zero_grad();
}

void init_glorot_uniform(ParamTensor& weight, std::size_t fan_in,
                         std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : weight.values) v = dist(rng);
}

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
}

}  // namespace

std::uint64_t params_checksum(const ConstParamRefs& params) {
  std::uint64_t h = kFnvOffset;
  for (const ParamTensor* p : params) {
    fnv_bytes(h, p->name.data(), p->name.size());
    for (std::size_t d : p->shape) {
      std::uint64_t d64 = d;
      fnv_bytes(h, &d64, sizeof d64);
    }
    fnv_bytes(h, p->values.data(), p->values.size() * sizeof(double));
  }
  return h;
}

void copy_values(const ConstParamRefs& from, const ParamRefs& to) {
  if (from.size() != to.size()) {
    throw ShapeError("parameter lists differ in length");
  }
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i]->shape != to[i]->shape) {
      throw ShapeError("parameter '" + from[i]->name + "' shape " +
                       from[i]->shape_string() + " vs '" + to[i]->name +
                       "' shape " + to[i]->shape_string());
    }
    to[i]->values = from[i]->values;
  }
}

}  // namespace cirm
