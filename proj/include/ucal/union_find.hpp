#pragma once

#include <cstddef>
#include <numeric>
#include <vector>

namespace ucal {

// Disjoint-set forest with path halving and union by size. Grows on demand.
class UnionFind {
  public:
    UnionFind() = default;
    explicit UnionFind(std::size_t n) { reserve(n); }

    void reserve(std::size_t n) {
        const std::size_t old = parent_.size();
        if (n <= old) return;
        parent_.resize(n);
        size_.resize(n, 1);
        std::iota(parent_.begin() + static_cast<std::ptrdiff_t>(old), parent_.end(), old);
    }

    std::size_t size() const noexcept { return parent_.size(); }

    std::size_t find(std::size_t x) {
        reserve(x + 1);
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x          = parent_[x];
        }
        return x;
    }

    // Root lookup without mutation; elements never seen are their own root.
    std::size_t find(std::size_t x) const {
        if (x >= parent_.size()) return x;
        while (parent_[x] != x) x = parent_[x];
        return x;
    }

    // Returns false when a and b were already connected.
    bool unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return false;
        if (size_[a] < size_[b] || (size_[a] == size_[b] && b < a)) std::swap(a, b);
        parent_[b] = a;
        size_[a] += size_[b];
        return true;
    }

    bool connected(std::size_t a, std::size_t b) const { return find(a) == find(b); }

  private:
    std::vector<std::size_t> parent_;
    std::vector<std::size_t> size_;
};

}  // namespace ucal
