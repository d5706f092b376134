#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "taco/tensor.hpp"

namespace taco {

// Ordered registry of named learnable tensors.
//
// Naming scheme: "<module>.<path>", e.g. "compressor.block0.row.wq",
// "predictor.encoder.num_w", "bridge.w1", "predictor.head.w". Parameter
// groups (theta, phi, bridge) are selected by prefix.
class ModelParams {
  public:
    // References returned by add/at stay valid while the registry lives
    // (deque storage: no reallocation on growth).
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const { return items_.size(); }
    const std::deque<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::deque<std::pair<std::string, Tensor>>& items() { return items_; }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const;
    std::int64_t total_coordinates() const;

    void zero_grads();

    // FNV-1a over names, shapes and raw values. Used for the frozen-group
    // checks and as the checkpoint identity in provenance metadata.
    std::uint64_t fingerprint() const;
    std::uint64_t fingerprint_prefix(const std::string& prefix) const;

  private:
    std::deque<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Gradient map produced by one backward pass: one entry per parameter, in
// registry order; parameters unreachable from the loss hold zeros.
struct GradMap {
    std::vector<std::pair<std::string, std::vector<double>>> grads;

    std::vector<double>& at(const std::string& name);
    const std::vector<double>* find(const std::string& name) const;
};

// Zeroes parameter grads, runs backward on `loss`, and collects one gradient
// entry per parameter (zeros for parameters the loss does not reach).
GradMap collect_gradients(const Tensor& loss, ModelParams& params);

}  // namespace taco
