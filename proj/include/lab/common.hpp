#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lab {

// Error taxonomy shared by every module. Operational failures throw; negative
// scientific results are reported in run artifacts instead.
enum class ErrKind {
    dimension,   // shape mismatch
    index,       // out-of-range index
    contract,    // caller violated a precondition
    input,       // malformed input value
    domain,      // numeric argument outside the mathematical domain
    rule,        // game-rule violation
    data,        // missing or inconsistent data
    integrity,   // artifact corruption (hash mismatch, odd Euler char, ...)
    usage,       // bad CLI/config usage
    divergence,  // training produced non-finite loss
    fit_failure  // all optimizer starts failed
};

class Error : public std::runtime_error {
public:
    Error(ErrKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrKind kind() const { return kind_; }

private:
    ErrKind kind_;
};

[[noreturn]] void fail(ErrKind kind, const std::string& msg);

const char* err_kind_name(ErrKind kind);

// splitmix64, the usual seed mixer.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Master-seed expansion: seed(master, component) = splitmix64 stream keyed by
// FNV-1a(component). Adding a component never perturbs existing streams.
uint64_t derive_seed(uint64_t master, std::string_view component);

// Small deterministic RNG used everywhere instead of std:: distributions so
// that streams are identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n);

    // standard normal, Box-Muller with cached spare
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lab
