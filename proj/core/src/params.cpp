#include "taco/params.hpp"

#include <algorithm>

namespace taco {

Tensor& ModelParams::add(const std::string& name, Tensor t) {
    if (has(name)) throw ConfigError("ModelParams: duplicate parameter '" + name + "'");
    t.set_requires_grad(true);
    index_.emplace(name, items_.size());
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

Tensor& ModelParams::at(const std::string& name) {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ModelParams: unknown parameter '" + name + "'");
    return items_[it->second].second;
}

const Tensor& ModelParams::at(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("ModelParams: unknown parameter '" + name + "'");
    return items_[it->second].second;
}

std::vector<std::string> ModelParams::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, t] : items_)
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
}

std::int64_t ModelParams::total_coordinates() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

void ModelParams::zero_grads() {
    for (auto& [name, t] : items_) t.zero_grad();
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_bytes(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
}

}  // namespace

std::uint64_t ModelParams::fingerprint() const { return fingerprint_prefix(""); }

std::uint64_t ModelParams::fingerprint_prefix(const std::string& prefix) const {
    std::uint64_t h = kFnvOffset;
    for (const auto& [name, t] : items_) {
        if (name.rfind(prefix, 0) != 0) continue;
        fnv_bytes(h, name.data(), name.size());
        for (std::int64_t d : t.shape()) fnv_bytes(h, &d, sizeof(d));
        fnv_bytes(h, t.values().data(), t.values().size_bytes());
    }
    return h;
}

std::vector<double>& GradMap::at(const std::string& name) {
    for (auto& [n, g] : grads)
        if (n == name) return g;
    throw ConfigError("GradMap: unknown parameter '" + name + "'");
}

const std::vector<double>* GradMap::find(const std::string& name) const {
    for (const auto& [n, g] : grads)
        if (n == name) return &g;
    return nullptr;
}

GradMap collect_gradients(const Tensor& loss, ModelParams& params) {
    params.zero_grads();
    backward(loss);
    GradMap map;
    map.grads.reserve(params.size());
    for (const auto& [name, t] : params.items()) {
        const auto g = t.grad();
        if (g.empty()) {
            // Parameter did not contribute to this loss.
            map.grads.emplace_back(name, std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0));
        } else {
            map.grads.emplace_back(name, std::vector<double>(g.begin(), g.end()));
        }
    }
    return map;
}

}  // namespace taco
