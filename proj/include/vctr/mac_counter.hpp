#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace vctr {

// Instrumented multiply-accumulate tally. Ops report the MACs they execute
// to the recorder active on the current thread, bucketed under the
// innermost MacLabel. With no recorder active, reporting is a no-op.
class MacRecorder {
public:
    MacRecorder();
    ~MacRecorder();
    MacRecorder(const MacRecorder&) = delete;
    MacRecorder& operator=(const MacRecorder&) = delete;

    const std::map<std::string, std::uint64_t>& buckets() const { return buckets_; }
    std::uint64_t total() const;
    // Sum of all buckets whose label starts with `prefix`.
    std::uint64_t total_with_prefix(const std::string& prefix) const;

    static void add(std::uint64_t macs);

private:
    friend class MacLabel;
    std::map<std::string, std::uint64_t> buckets_;
    std::string label_ = "other";
    MacRecorder* previous_;
};

class MacLabel {
public:
    explicit MacLabel(std::string label);
    ~MacLabel();
    MacLabel(const MacLabel&) = delete;
    MacLabel& operator=(const MacLabel&) = delete;

private:
    std::string previous_;
    bool engaged_ = false;
};

}  // namespace vctr
