#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include "ftl/dataset.hpp"

namespace ftl {

/// Entry point of the `ftl` tool. Returns the process exit code:
/// 0 success, 1 validation failure, 2 runtime failure.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// `anchor_ref,positive_ref,negative_ref,l_a,l_p,l_n`
void write_triplet_listing(const std::filesystem::path& path, const std::vector<Triplet>& triplets);

/// Re-reads a listing, maps each ref back to its manifest record and checks the triplet
/// invariants. Returns the number of rows. Throws ValidationError on the first bad row.
std::size_t verify_triplet_listing(const std::filesystem::path& path, const Manifest& manifest);

}  // namespace ftl
