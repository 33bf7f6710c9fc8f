#include "lab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lab {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace {
constexpr const char* kMagic = "SPLINELAB-CKPT 1";
}

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrKind::data, "cannot write checkpoint: " + path);
    out << kMagic << "\n";
    out << "params " << params.size() << "\n";
    for (const auto& p : params) {
        out << p.name;
        for (size_t d : p.tensor.shape()) out << " " << d;
        out << "\n";
    }
    out << "END\n";
    for (const auto& p : params) {
        const auto& v = p.tensor.values();
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) fail(ErrKind::data, "short write on checkpoint: " + path);
}

std::vector<std::pair<std::string, std::vector<size_t>>> read_checkpoint_manifest(
    const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrKind::data, "cannot open checkpoint: " + path);
    std::string line;
    std::getline(in, line);
    if (line != kMagic) fail(ErrKind::integrity, "bad checkpoint magic in " + path);
    std::getline(in, line);
    std::istringstream hdr(line);
    std::string word;
    size_t n = 0;
    hdr >> word >> n;
    if (word != "params") fail(ErrKind::integrity, "bad checkpoint header in " + path);
    std::vector<std::pair<std::string, std::vector<size_t>>> manifest;
    manifest.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) fail(ErrKind::integrity, "truncated checkpoint manifest");
        std::istringstream ls(line);
        std::string name;
        ls >> name;
        std::vector<size_t> shape;
        size_t d;
        while (ls >> d) shape.push_back(d);
        manifest.emplace_back(std::move(name), std::move(shape));
    }
    std::getline(in, line);
    if (line != "END") fail(ErrKind::integrity, "missing END marker in checkpoint manifest");
    return manifest;
}

void load_checkpoint(const std::string& path, std::vector<NamedParam>& params) {
    auto manifest = read_checkpoint_manifest(path);
    if (manifest.size() != params.size())
        fail(ErrKind::data, "checkpoint has " + std::to_string(manifest.size()) +
                                " params, model expects " + std::to_string(params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        if (manifest[i].first != params[i].name)
            fail(ErrKind::data, "checkpoint param " + std::to_string(i) + " is '" +
                                    manifest[i].first + "', expected '" + params[i].name + "'");
        if (manifest[i].second != params[i].tensor.shape())
            fail(ErrKind::data, "checkpoint shape mismatch for '" + params[i].name + "': " +
                                    shape_str(manifest[i].second) + " vs " +
                                    shape_str(params[i].tensor.shape()));
    }
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::getline(in, line);  // magic
    std::getline(in, line);  // count
    for (size_t i = 0; i < params.size() + 1; ++i) std::getline(in, line);  // manifest + END
    for (auto& p : params) {
        auto& v = p.tensor.values();
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!in) fail(ErrKind::integrity, "truncated checkpoint data in " + path);
    }
}

}  // namespace lab
