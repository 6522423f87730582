#ifndef METADMOE_PARAM_STORE_HPP
#define METADMOE_PARAM_STORE_HPP

#include "metadmoe/autodiff.hpp"
#include "metadmoe/hash.hpp"

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace metadmoe {

/// Insertion-ordered name -> value map. Names are unique and the set of names
/// is fixed once inserted.
template <typename T>
class NamedArrays {
 public:
  void add(const std::string& name, T value) {
    if (index_.count(name) != 0) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, values_.size());
    names_.push_back(name);
    values_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  const T& at(const std::string& name) const { return values_[position(name)]; }
  T& at(const std::string& name) { return values_[position(name)]; }
  const T& at(std::size_t i) const { return values_[i]; }
  T& at(std::size_t i) { return values_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<T>& values() const { return values_; }

 private:
  std::size_t position(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<T> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Named, shaped parameter arrays for one model component.
template <typename Scalar>
class ParamStore : public NamedArrays<Matrix<Scalar>> {
 public:
  using Base = NamedArrays<Matrix<Scalar>>;
  using Base::at;
  using Base::name;
  using Base::names;
  using Base::size;

  /// Assigns new values keeping every declared shape.
  void assign(const std::string& key, const Matrix<Scalar>& value) {
    Matrix<Scalar>& slot = at(key);
    if (slot.rows() != value.rows() || slot.cols() != value.cols()) {
      throw std::invalid_argument("shape change on parameter " + key);
    }
    slot = value;
  }

  Index num_elements() const {
    Index total = 0;
    for (const auto& v : this->values()) total += v.size();
    return total;
  }

  /// Concatenates every array in insertion order (each array row-major).
  Vector<Scalar> flatten() const {
    Vector<Scalar> flat(num_elements());
    Index at_pos = 0;
    for (const auto& v : this->values()) {
      for (Index r = 0; r < v.rows(); ++r) {
        for (Index c = 0; c < v.cols(); ++c) flat(at_pos++) = v(r, c);
      }
    }
    return flat;
  }

  /// Inverse of flatten(); the layout of `this` supplies names and shapes.
  ParamStore unflatten(const Vector<Scalar>& flat) const {
    if (flat.size() != num_elements()) throw std::invalid_argument("unflatten: size mismatch");
    ParamStore out;
    Index at_pos = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      const Matrix<Scalar>& shape = at(i);
      Matrix<Scalar> v(shape.rows(), shape.cols());
      for (Index r = 0; r < v.rows(); ++r) {
        for (Index c = 0; c < v.cols(); ++c) v(r, c) = flat(at_pos++);
      }
      out.add(name(i), std::move(v));
    }
    return out;
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(name(i), at(i).template cast<Other>());
    return out;
  }

  /// Digest over names, shapes and raw bytes.
  std::uint64_t digest() const {
    Fnv1a h;
    for (std::size_t i = 0; i < size(); ++i) {
      h.update(name(i));
      const std::int64_t shape[2] = {at(i).rows(), at(i).cols()};
      h.update(shape, sizeof(shape));
      h.update(at(i).data(), sizeof(Scalar) * static_cast<std::size_t>(at(i).size()));
    }
    return h.value();
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.names() != b.names()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a.at(i).rows() != b.at(i).rows() || a.at(i).cols() != b.at(i).cols()) return false;
      if (a.at(i) != b.at(i)) return false;
    }
    return true;
  }
};

/// Graph handles for a ParamStore, used inside differentiable computations.
template <typename Scalar>
class ParamVars : public NamedArrays<ad::Var<Scalar>> {
 public:
  using Base = NamedArrays<ad::Var<Scalar>>;

  static ParamVars from_store(const ParamStore<Scalar>& store, bool requires_grad) {
    ParamVars out;
    for (std::size_t i = 0; i < store.size(); ++i) {
      out.add(store.name(i), ad::Var<Scalar>::leaf(store.at(i), requires_grad));
    }
    return out;
  }

  ParamStore<Scalar> values_store() const {
    ParamStore<Scalar> out;
    for (std::size_t i = 0; i < this->size(); ++i) out.add(this->name(i), this->at(i).value());
    return out;
  }

  std::vector<ad::Var<Scalar>> list() const { return this->values(); }
};

template <typename Scalar>
ParamStore<Scalar> zeros_like(const ParamStore<Scalar>& store) {
  ParamStore<Scalar> out;
  for (std::size_t i = 0; i < store.size(); ++i) {
    out.add(store.name(i), Matrix<Scalar>::Zero(store.at(i).rows(), store.at(i).cols()));
  }
  return out;
}

/// Pairs gradients returned by ad::grad with the names of `like`.
template <typename Scalar>
ParamStore<Scalar> to_store(const ParamStore<Scalar>& like, const std::vector<ad::Var<Scalar>>& grads,
                            std::size_t offset = 0) {
  ParamStore<Scalar> out;
  for (std::size_t i = 0; i < like.size(); ++i) out.add(like.name(i), grads.at(offset + i).value());
  return out;
}

template <typename Scalar>
Scalar squared_norm(const ParamStore<Scalar>& store) {
  Scalar total = 0;
  for (const auto& v : store.values()) total += v.squaredNorm();
  return total;
}

}  // namespace metadmoe

#endif  // METADMOE_PARAM_STORE_HPP
