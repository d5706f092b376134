#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "taco/errors.hpp"

namespace taco {

// Process-wide counter for the inference engine's working memory.
//
// Every buffer the engine allocates is charged here. PeakWindow observers
// record the high-water mark of tracked memory over their lifetime; windows
// nest freely (fit/predict open their own around the caller's). An optional
// capacity cap turns oversized requests into structured CapacityError, which
// is how the grid runner records out-of-memory cells instead of crashing.
class AllocTracker {
  public:
    static AllocTracker& instance();

    void charge(std::size_t bytes);
    void release(std::size_t bytes);

    std::size_t current_bytes() const { return current_.load(std::memory_order_relaxed); }

    // 0 disables the cap.
    void set_capacity_limit(std::size_t bytes) { limit_.store(bytes, std::memory_order_relaxed); }
    std::size_t capacity_limit() const { return limit_.load(std::memory_order_relaxed); }

    int open_window();
    void close_window(int slot);
    std::size_t window_peak(int slot) const {
        return window_peaks_[static_cast<std::size_t>(slot)].load(std::memory_order_relaxed);
    }

  private:
    static constexpr int kMaxWindows = 32;
    std::atomic<std::size_t> current_{0};
    std::atomic<std::size_t> limit_{0};
    std::atomic<std::uint32_t> active_mask_{0};
    std::array<std::atomic<std::size_t>, kMaxWindows> window_peaks_{};
};

// RAII peak-measurement window over the tracker's high-water mark.
class PeakWindow {
  public:
    PeakWindow() : slot_(AllocTracker::instance().open_window()) {}
    ~PeakWindow() { AllocTracker::instance().close_window(slot_); }
    PeakWindow(const PeakWindow&) = delete;
    PeakWindow& operator=(const PeakWindow&) = delete;

    std::size_t peak() const { return AllocTracker::instance().window_peak(slot_); }

  private:
    int slot_;
};

// Vector-backed buffer whose footprint is charged to the tracker.
template <typename T>
class TrackedBuffer {
  public:
    TrackedBuffer() = default;
    explicit TrackedBuffer(std::size_t n) { resize(n); }
    TrackedBuffer(std::size_t n, T fill) {
        resize(n);
        std::fill(data_.begin(), data_.end(), fill);
    }
    TrackedBuffer(const TrackedBuffer& other) : TrackedBuffer() { *this = other; }
    TrackedBuffer& operator=(const TrackedBuffer& other) {
        if (this != &other) {
            resize(other.size());
            data_ = other.data_;
        }
        return *this;
    }
    TrackedBuffer(TrackedBuffer&& other) noexcept
        : data_(std::move(other.data_)), charged_(other.charged_) {
        other.charged_ = 0;
    }
    TrackedBuffer& operator=(TrackedBuffer&& other) noexcept {
        if (this != &other) {
            release_charge();
            data_ = std::move(other.data_);
            charged_ = other.charged_;
            other.charged_ = 0;
        }
        return *this;
    }
    ~TrackedBuffer() { release_charge(); }

    void resize(std::size_t n) {
        const std::size_t bytes = n * sizeof(T);
        AllocTracker::instance().charge(bytes);
        release_charge();
        charged_ = bytes;
        data_.resize(n);
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    std::size_t size() const { return data_.size(); }
    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  private:
    void release_charge() {
        if (charged_) {
            AllocTracker::instance().release(charged_);
            charged_ = 0;
        }
    }

    std::vector<T> data_;
    std::size_t charged_ = 0;
};

}  // namespace taco
