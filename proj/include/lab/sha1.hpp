#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace lab {

// Plain SHA-1, enough for content addressing of run artifacts.
std::string sha1_hex(std::string_view data);

// git blob hash: sha1("blob <len>\0" + content)
std::string git_blob_hash(std::string_view content);

std::string git_blob_hash_file(const std::string& path);

}  // namespace lab
