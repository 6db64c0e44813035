#pragma once

#include <array>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ftl {

enum class Authenticity { real, fake };

inline constexpr const char* kRealCategory = "real";

/// Manipulation families of the FaceForensics++ benchmark. Any other non-"real" name
/// is accepted as an additional (e.g. synthetic) family.
inline const std::vector<std::string> kStandardFakeCategories = {"Deepfakes", "Face2Face", "FaceSwap",
                                                                 "NeuralTextures"};

/// One frame of one video.
struct SampleRecord {
  std::string identity_id;
  long frame_index = 0;
  Authenticity authenticity = Authenticity::real;
  std::string forgery_category = kRealCategory;
  std::string payload_ref;

  bool is_fake() const { return authenticity == Authenticity::fake; }
  bool operator==(const SampleRecord&) const = default;
};

/// Ordering used everywhere a deterministic record order is needed.
bool record_less(const SampleRecord& a, const SampleRecord& b);

std::string to_string(Authenticity a);
Authenticity parse_authenticity(const std::string& s);

struct Manifest {
  std::string dataset_name;
  std::filesystem::path base_dir;  // payload_ref values are resolved against this
  std::vector<SampleRecord> records;

  std::size_t count(Authenticity a) const;
};

/// Checks record invariants, sorts, and rejects duplicate keys. Throws ValidationError.
void normalize_manifest(Manifest& manifest);

/// Newline-delimited JSON, one record per line. The dataset name is the file stem.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Records whose identity is in `identities` (or all when empty) and whose category is
/// "real" or in `categories` (or any when empty).
Manifest select_records(const Manifest& manifest, const std::set<std::string>& identities,
                        const std::set<std::string>& categories, std::string dataset_name);

/// Distinct identities in manifest order.
std::vector<std::string> identities_of(const Manifest& manifest);
/// Distinct fake categories, sorted.
std::vector<std::string> fake_categories_of(const Manifest& manifest);

struct Triplet {
  SampleRecord anchor;
  SampleRecord positive;
  SampleRecord negative;
  std::array<int, 3> labels{};  // 0 = real, 1 = fake, per element
};

/// Empty string when all triplet invariants hold, otherwise a description of the first
/// violated one.
std::string triplet_violation(const Triplet& t);

/// Temporal split: first floor(n/2) and next floor(n/2) elements; an odd tail is dropped.
std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> halve(const std::vector<SampleRecord>& samples);

/// Controlled triplets for one (identity, forgery category) stream pair.
std::vector<Triplet> form_triplets(std::vector<SampleRecord> reals, std::vector<SampleRecord> fakes);

/// Union of form_triplets over every (identity, included category) pair, in manifest order.
std::vector<Triplet> build_triplet_set(const Manifest& manifest, const std::set<std::string>& included_categories);

}  // namespace ftl
