#include "lab/common.hpp"

#include <cmath>
#include <vector>

namespace lab {

void fail(ErrKind kind, const std::string& msg) { throw Error(kind, msg); }

const char* err_kind_name(ErrKind kind) {
    switch (kind) {
        case ErrKind::dimension: return "dimension";
        case ErrKind::index: return "index";
        case ErrKind::contract: return "contract";
        case ErrKind::input: return "input";
        case ErrKind::domain: return "domain";
        case ErrKind::rule: return "rule";
        case ErrKind::data: return "data";
        case ErrKind::integrity: return "integrity";
        case ErrKind::usage: return "usage";
        case ErrKind::divergence: return "divergence";
        case ErrKind::fit_failure: return "fit_failure";
    }
    return "unknown";
}

uint64_t derive_seed(uint64_t master, std::string_view component) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : component) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    uint64_t state = master ^ h;
    // one warm-up step so nearby master seeds decorrelate
    return splitmix64(state);
}

uint64_t Rng::below(uint64_t n) {
    if (n == 0) return 0;
    // rejection sampling to avoid modulo bias
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

}  // namespace lab
