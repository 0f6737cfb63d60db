#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dolfin {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using MatMap = Eigen::Map<Mat<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const Mat<S>>;

/// A named rows x cols block inside a flat parameter buffer.
struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;

  std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
};

/// Ordered table of named tensors over one contiguous buffer. Parameters,
/// gradients and optimizer moments all share the same table.
class SlotTable {
 public:
  std::size_t add(std::string name, int rows, int cols) {
    slots_.push_back(TensorSlot{std::move(name), total_, rows, cols});
    total_ += slots_.back().size();
    return slots_.size() - 1;
  }

  const TensorSlot& operator[](std::size_t i) const { return slots_[i]; }
  const std::vector<TensorSlot>& slots() const { return slots_; }
  std::size_t total() const { return total_; }
  const TensorSlot* find(const std::string& name) const {
    for (const auto& s : slots_) {
      if (s.name == name) return &s;
    }
    return nullptr;
  }

  template <class S>
  MatMap<S> map(std::vector<S>& buffer, std::size_t slot) const {
    const TensorSlot& s = slots_[slot];
    return MatMap<S>(buffer.data() + s.offset, s.rows, s.cols);
  }
  template <class S>
  ConstMatMap<S> map(const std::vector<S>& buffer, std::size_t slot) const {
    const TensorSlot& s = slots_[slot];
    return ConstMatMap<S>(buffer.data() + s.offset, s.rows, s.cols);
  }

 private:
  std::vector<TensorSlot> slots_;
  std::size_t total_ = 0;
};

}  // namespace dolfin
