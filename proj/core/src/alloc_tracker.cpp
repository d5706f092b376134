#include "taco/alloc_tracker.hpp"

#include <string>

namespace taco {

AllocTracker& AllocTracker::instance() {
    static AllocTracker tracker;
    return tracker;
}

void AllocTracker::charge(std::size_t bytes) {
    const std::size_t limit = limit_.load(std::memory_order_relaxed);
    std::size_t cur = current_.load(std::memory_order_relaxed);
    if (limit != 0 && cur + bytes > limit) {
        throw CapacityError("allocation of " + std::to_string(bytes) +
                                " bytes exceeds capacity limit of " + std::to_string(limit) +
                                " bytes (current " + std::to_string(cur) + ")",
                            bytes);
    }
    cur = current_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
    std::uint32_t mask = active_mask_.load(std::memory_order_relaxed);
    while (mask) {
        const int slot = __builtin_ctz(mask);
        mask &= mask - 1;
        auto& peak = window_peaks_[static_cast<std::size_t>(slot)];
        std::size_t seen = peak.load(std::memory_order_relaxed);
        while (cur > seen && !peak.compare_exchange_weak(seen, cur, std::memory_order_relaxed)) {
        }
    }
}

void AllocTracker::release(std::size_t bytes) {
    current_.fetch_sub(bytes, std::memory_order_relaxed);
}

int AllocTracker::open_window() {
    std::uint32_t mask = active_mask_.load(std::memory_order_relaxed);
    for (;;) {
        int slot = -1;
        for (int i = 0; i < kMaxWindows; ++i) {
            if (!(mask & (1u << i))) {
                slot = i;
                break;
            }
        }
        if (slot < 0) throw Error("AllocTracker: too many nested peak windows");
        window_peaks_[static_cast<std::size_t>(slot)].store(current_bytes(),
                                                            std::memory_order_relaxed);
        if (active_mask_.compare_exchange_weak(mask, mask | (1u << slot),
                                               std::memory_order_relaxed))
            return slot;
    }
}

void AllocTracker::close_window(int slot) {
    active_mask_.fetch_and(~(1u << slot), std::memory_order_relaxed);
}

}  // namespace taco
