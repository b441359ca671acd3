#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ajepa/error.hpp"

namespace ajepa {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream out;
  out << rows << "x" << cols;
  return out.str();
}

/// Named, shaped parameter arrays. Names are ordered, which fixes iteration
/// order for serialization and optimizer updates.
template <typename T>
class ParamStore {
 public:
  using Array = Mat<T>;

  void add(const std::string& name, Array value) {
    if (!arrays_.emplace(name, std::move(value)).second) {
      throw ConfigError("duplicate parameter '" + name + "'");
    }
  }

  bool contains(const std::string& name) const {
    return arrays_.count(name) != 0;
  }

  Array& at(const std::string& name) {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }

  const Array& at(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ShapeError("missing parameter '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return arrays_.size(); }
  bool empty() const { return arrays_.empty(); }

  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, a] : arrays_) n += static_cast<std::size_t>(a.size());
    return n;
  }

  /// Store with the same names and shapes, all zeros.
  ParamStore zeros_like() const {
    ParamStore out;
    for (const auto& [name, a] : arrays_) {
      out.arrays_.emplace(name, Array::Zero(a.rows(), a.cols()));
    }
    return out;
  }

  void set_zero() {
    for (auto& [name, a] : arrays_) a.setZero();
  }

  bool same_layout(const ParamStore& other) const {
    if (arrays_.size() != other.arrays_.size()) return false;
    auto it = other.arrays_.begin();
    for (const auto& [name, a] : arrays_) {
      if (it->first != name || it->second.rows() != a.rows() ||
          it->second.cols() != a.cols()) {
        return false;
      }
      ++it;
    }
    return true;
  }

  void require_same_layout(const ParamStore& other, const char* what) const {
    if (!same_layout(other)) {
      throw ShapeError(std::string(what) + ": parameter stores differ in layout");
    }
  }

  bool all_finite() const {
    for (const auto& [name, a] : arrays_) {
      if (!a.allFinite()) return false;
    }
    return true;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, a] : arrays_) out.add(name, a.template cast<U>());
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    if (!a.same_layout(b)) return false;
    auto it = b.arrays_.begin();
    for (const auto& [name, x] : a.arrays_) {
      if (x != it->second) return false;
      ++it;
    }
    return true;
  }

 private:
  std::map<std::string, Array> arrays_;
};

/// Rows of `source` selected by `rows`, in the given order.
template <typename Derived>
Mat<typename Derived::Scalar> gather_rows(const Eigen::MatrixBase<Derived>& source,
                                          const std::vector<int>& rows) {
  Mat<typename Derived::Scalar> out(static_cast<Eigen::Index>(rows.size()),
                                    source.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = source.row(rows[i]);
  }
  return out;
}

}  // namespace ajepa
