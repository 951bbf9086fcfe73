#include "vctr/mac_counter.hpp"

namespace vctr {

namespace {
thread_local MacRecorder* g_recorder = nullptr;
}

MacRecorder::MacRecorder() : previous_(g_recorder) { g_recorder = this; }
MacRecorder::~MacRecorder() { g_recorder = previous_; }

std::uint64_t MacRecorder::total() const {
    std::uint64_t sum = 0;
    for (const auto& [label, macs] : buckets_) sum += macs;
    return sum;
}

std::uint64_t MacRecorder::total_with_prefix(const std::string& prefix) const {
    std::uint64_t sum = 0;
    for (const auto& [label, macs] : buckets_)
        if (label.compare(0, prefix.size(), prefix) == 0) sum += macs;
    return sum;
}

void MacRecorder::add(std::uint64_t macs) {
    if (g_recorder != nullptr) g_recorder->buckets_[g_recorder->label_] += macs;
}

MacLabel::MacLabel(std::string label) {
    if (g_recorder == nullptr) return;
    engaged_ = true;
    previous_ = std::move(g_recorder->label_);
    g_recorder->label_ = std::move(label);
}

MacLabel::~MacLabel() {
    if (engaged_ && g_recorder != nullptr) g_recorder->label_ = std::move(previous_);
}

}  // namespace vctr
