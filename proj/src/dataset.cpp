#include "ftl/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "ftl/common.hpp"
#include "json.hpp"

namespace ftl {

using nlohmann::json;

bool record_less(const SampleRecord& a, const SampleRecord& b) {
  return std::tie(a.identity_id, a.forgery_category, a.frame_index) <
         std::tie(b.identity_id, b.forgery_category, b.frame_index);
}

std::string to_string(Authenticity a) { return a == Authenticity::real ? "real" : "fake"; }

Authenticity parse_authenticity(const std::string& s) {
  if (s == "real") return Authenticity::real;
  if (s == "fake") return Authenticity::fake;
  throw ValidationError("authenticity must be \"real\" or \"fake\", got \"" + s + "\"");
}

std::size_t Manifest::count(Authenticity a) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [a](const SampleRecord& r) { return r.authenticity == a; }));
}

namespace {

std::string key_string(const SampleRecord& r) {
  return "(" + r.identity_id + ", " + r.forgery_category + ", " + std::to_string(r.frame_index) + ")";
}

void check_record(const SampleRecord& r) {
  if (r.identity_id.empty()) throw ValidationError("empty identity_id");
  if (r.forgery_category.empty()) throw ValidationError("empty forgery_category");
  if (r.frame_index < 0) throw ValidationError("negative frame_index in " + key_string(r));
  const bool real_category = r.forgery_category == kRealCategory;
  if ((r.authenticity == Authenticity::real) != real_category) {
    throw ValidationError("authenticity/category mismatch in " + key_string(r) +
                          ": real samples must use category \"real\" and fakes any other");
  }
}

SampleRecord parse_record(const std::string& line) {
  const json j = json::parse(line);
  if (!j.is_object()) throw ValidationError("record is not an object");
  static const std::set<std::string> kFields = {"identity_id", "frame_index", "authenticity", "forgery_category",
                                                "payload_ref"};
  for (const auto& [key, _] : j.items()) {
    if (!kFields.contains(key)) throw ValidationError("unknown field \"" + key + "\"");
  }
  for (const auto& f : kFields) {
    if (!j.contains(f)) throw ValidationError("missing field \"" + f + "\"");
  }
  if (!j["frame_index"].is_number_integer()) throw ValidationError("frame_index must be an integer");
  SampleRecord r;
  r.identity_id = j["identity_id"].get<std::string>();
  r.frame_index = j["frame_index"].get<long>();
  r.authenticity = parse_authenticity(j["authenticity"].get<std::string>());
  r.forgery_category = j["forgery_category"].get<std::string>();
  r.payload_ref = j["payload_ref"].get<std::string>();
  check_record(r);
  return r;
}

}  // namespace

void normalize_manifest(Manifest& manifest) {
  for (const auto& r : manifest.records) check_record(r);
  std::sort(manifest.records.begin(), manifest.records.end(), record_less);
  for (std::size_t i = 1; i < manifest.records.size(); ++i) {
    const auto& a = manifest.records[i - 1];
    const auto& b = manifest.records[i];
    if (a.identity_id == b.identity_id && a.forgery_category == b.forgery_category &&
        a.frame_index == b.frame_index) {
      throw ValidationError("duplicate record key " + key_string(b));
    }
  }
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("manifest not found: " + path.string());
  Manifest m;
  m.dataset_name = path.stem().string();
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.records.push_back(parse_record(line));
    } catch (const json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  try {
    normalize_manifest(m);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write manifest: " + path.string());
  for (const auto& r : manifest.records) {
    // ordered_json keeps the documented field order on disk
    nlohmann::ordered_json j;
    j["identity_id"] = r.identity_id;
    j["frame_index"] = r.frame_index;
    j["authenticity"] = to_string(r.authenticity);
    j["forgery_category"] = r.forgery_category;
    j["payload_ref"] = r.payload_ref;
    out << j.dump() << '\n';
  }
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

Manifest select_records(const Manifest& manifest, const std::set<std::string>& identities,
                        const std::set<std::string>& categories, std::string dataset_name) {
  Manifest out;
  out.dataset_name = std::move(dataset_name);
  out.base_dir = manifest.base_dir;
  for (const auto& r : manifest.records) {
    if (!identities.empty() && !identities.contains(r.identity_id)) continue;
    if (r.is_fake() && !categories.empty() && !categories.contains(r.forgery_category)) continue;
    out.records.push_back(r);
  }
  return out;
}

std::vector<std::string> identities_of(const Manifest& manifest) {
  std::vector<std::string> ids;
  for (const auto& r : manifest.records) {
    if (ids.empty() || ids.back() != r.identity_id) ids.push_back(r.identity_id);
  }
  return ids;
}

std::vector<std::string> fake_categories_of(const Manifest& manifest) {
  std::set<std::string> cats;
  for (const auto& r : manifest.records) {
    if (r.is_fake()) cats.insert(r.forgery_category);
  }
  return {cats.begin(), cats.end()};
}

std::string triplet_violation(const Triplet& t) {
  const auto& a = t.anchor;
  const auto& p = t.positive;
  const auto& n = t.negative;
  if (a.identity_id != p.identity_id || a.identity_id != n.identity_id) return "identity differs across elements";
  if (a.authenticity != p.authenticity) return "anchor and positive differ in authenticity";
  if (a.authenticity == n.authenticity) return "negative shares the anchor's authenticity";
  if (a.frame_index != n.frame_index) return "anchor and negative are not frame-aligned";
  if (a.frame_index == p.frame_index) return "anchor and positive share a frame";
  const int la = a.is_fake() ? 1 : 0;
  const std::array<int, 3> expected{la, la, 1 - la};
  if (t.labels != expected) return "element labels do not match element authenticity";
  return {};
}

std::pair<std::vector<SampleRecord>, std::vector<SampleRecord>> halve(const std::vector<SampleRecord>& samples) {
  const std::size_t h = samples.size() / 2;
  return {{samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(h)},
          {samples.begin() + static_cast<std::ptrdiff_t>(h), samples.begin() + static_cast<std::ptrdiff_t>(2 * h)}};
}

std::vector<Triplet> form_triplets(std::vector<SampleRecord> reals, std::vector<SampleRecord> fakes) {
  if (fakes.empty()) return {};

  const std::string& identity = fakes.front().identity_id;
  const std::string& category = fakes.front().forgery_category;
  for (const auto& f : fakes) {
    if (!f.is_fake()) throw ValidationError("form_triplets: real record among fakes");
    if (f.identity_id != identity) throw ValidationError("form_triplets: identity mismatch among fakes");
    if (f.forgery_category != category) {
      throw ValidationError("form_triplets: mixed forgery categories (" + category + ", " + f.forgery_category + ")");
    }
  }
  for (const auto& r : reals) {
    if (r.is_fake()) throw ValidationError("form_triplets: fake record among reals");
    if (r.identity_id != identity) {
      throw ValidationError("form_triplets: identity mismatch (" + r.identity_id + " vs " + identity + ")");
    }
  }

  const auto by_frame = [](const SampleRecord& a, const SampleRecord& b) { return a.frame_index < b.frame_index; };
  const auto same_frame = [](const SampleRecord& a, const SampleRecord& b) { return a.frame_index == b.frame_index; };
  std::sort(reals.begin(), reals.end(), by_frame);
  std::sort(fakes.begin(), fakes.end(), by_frame);
  if (std::adjacent_find(reals.begin(), reals.end(), same_frame) != reals.end() ||
      std::adjacent_find(fakes.begin(), fakes.end(), same_frame) != fakes.end()) {
    throw ValidationError("form_triplets: duplicate frame index for identity " + identity);
  }

  // Restrict reals to the frames the fake stream covers.
  std::vector<SampleRecord> aligned;
  aligned.reserve(fakes.size());
  for (const auto& f : fakes) {
    auto it = std::lower_bound(reals.begin(), reals.end(), f, by_frame);
    if (it == reals.end() || it->frame_index != f.frame_index) {
      throw ValidationError("form_triplets: unalignable frame " + std::to_string(f.frame_index) + " of " + identity +
                            "/" + category + " has no real counterpart");
    }
    aligned.push_back(*it);
  }

  const auto [r1, r2] = halve(aligned);
  const auto [f1, f2] = halve(fakes);
  const std::size_t h = std::min(r1.size(), f1.size());

  std::vector<Triplet> out;
  out.reserve(4 * h);
  const auto emit = [&](const std::vector<SampleRecord>& a, const std::vector<SampleRecord>& p,
                        const std::vector<SampleRecord>& n, std::array<int, 3> labels) {
    for (std::size_t i = 0; i < h; ++i) out.push_back({a[i], p[i], n[i], labels});
  };
  emit(r1, r2, f1, {0, 0, 1});
  emit(f1, f2, r1, {1, 1, 0});
  emit(r2, r1, f2, {0, 0, 1});
  emit(f2, f1, r2, {1, 1, 0});
  return out;
}

std::vector<Triplet> build_triplet_set(const Manifest& manifest, const std::set<std::string>& included_categories) {
  if (included_categories.empty()) throw ValidationError("included_categories must not be empty");
  if (included_categories.contains(kRealCategory)) {
    throw ValidationError("included_categories must not contain \"real\"");
  }

  // identity -> category -> records, keeping first-appearance identity order
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::vector<SampleRecord>>> groups;
  for (const auto& r : manifest.records) {
    auto [it, inserted] = groups.try_emplace(r.identity_id);
    if (inserted) order.push_back(r.identity_id);
    it->second[r.forgery_category].push_back(r);
  }

  std::vector<Triplet> out;
  for (const auto& id : order) {
    auto& cats = groups[id];
    const auto reals = cats.contains(kRealCategory) ? cats[kRealCategory] : std::vector<SampleRecord>{};
    for (const auto& cat : included_categories) {
      auto it = cats.find(cat);
      if (it == cats.end()) continue;
      auto ts = form_triplets(reals, it->second);
      out.insert(out.end(), std::make_move_iterator(ts.begin()), std::make_move_iterator(ts.end()));
    }
  }
  return out;
}

}  // namespace ftl
