#pragma once

#include <string>
#include <vector>

#include "lab/tensor.hpp"

namespace lab {

// Named parameter list in declared order; the unit every model exposes for
// checkpointing and optimizers.
struct NamedParam {
    std::string name;
    Tensor tensor;
};

// Checkpoint layout: text header ("SPLINELAB-CKPT 1"), a manifest of
// (name, shape) lines in declared order, an END marker, then the concatenated
// little-endian f64 buffers.
void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params);

// Loads values into the given tensors; names and shapes must match the file's
// manifest exactly and in order.
void load_checkpoint(const std::string& path, std::vector<NamedParam>& params);

// Reads just the manifest: (name, shape) pairs.
std::vector<std::pair<std::string, std::vector<size_t>>> read_checkpoint_manifest(
    const std::string& path);

}  // namespace lab
