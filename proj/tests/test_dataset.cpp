#include <algorithm>
#include <functional>
#include <map>

#include "doctest.h"
#include "ftl/common.hpp"
#include "ftl/dataset.hpp"
#include "support.hpp"

using namespace ftl;
using ftl::test::rec;
using ftl::test::stream;

namespace {

std::string line(const std::string& id, long frame, const std::string& auth, const std::string& cat) {
  return R"({"identity_id":")" + id + R"(","frame_index":)" + std::to_string(frame) + R"(,"authenticity":")" + auth +
         R"(","forgery_category":")" + cat + R"(","payload_ref":")" + id + "_" + cat + "_" + std::to_string(frame) +
         ".png\"}\n";
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("manifest with two valid lines") {
    test::TempDir dir;
    test::write_file(dir / "set.jsonl", line("b", 0, "real", "real") + line("a", 1, "fake", "Deepfakes"));
    const auto m = load_manifest(dir / "set.jsonl");
    REQUIRE(m.records.size() == 2);
    CHECK(m.dataset_name == "set");
    CHECK(m.records[0].identity_id == "a");  // sorted
    CHECK(m.records[0].is_fake());
    CHECK(m.records[1].payload_ref == "b_real_0.png");
    CHECK(m.count(Authenticity::real) == 1);
  }

  TEST_CASE("empty manifest is valid") {
    test::TempDir dir;
    test::write_file(dir / "empty.jsonl", "");
    CHECK(load_manifest(dir / "empty.jsonl").records.empty());
  }

  TEST_CASE("duplicate key is rejected by name") {
    test::TempDir dir;
    test::write_file(dir / "dup.jsonl", line("x7", 3, "fake", "FaceSwap") + line("x7", 3, "fake", "FaceSwap"));
    const auto msg = message_of([&] { load_manifest(dir / "dup.jsonl"); });
    CHECK(msg.find("duplicate") != std::string::npos);
    CHECK(msg.find("(x7, FaceSwap, 3)") != std::string::npos);
  }

  TEST_CASE("malformed lines report their line number") {
    test::TempDir dir;
    test::write_file(dir / "bad.jsonl", line("a", 0, "real", "real") + "\n{not json\n");
    CHECK(message_of([&] { load_manifest(dir / "bad.jsonl"); }).find(":3:") != std::string::npos);

    test::write_file(dir / "field.jsonl", line("a", 0, "real", "real") + R"({"identity_id":"a"})" + "\n");
    const auto msg = message_of([&] { load_manifest(dir / "field.jsonl"); });
    CHECK(msg.find(":2:") != std::string::npos);
    CHECK(msg.find("missing field") != std::string::npos);

    test::write_file(dir / "mismatch.jsonl", line("a", 0, "fake", "real"));
    CHECK(message_of([&] { load_manifest(dir / "mismatch.jsonl"); }).find(":1:") != std::string::npos);
  }

  TEST_CASE("missing manifest file") {
    CHECK_THROWS_AS(load_manifest("/nonexistent/m.jsonl"), ValidationError);
  }

  TEST_CASE("save and load round trip") {
    test::TempDir dir;
    Manifest m;
    m.records = {rec("a", 0), rec("a", 0, "X"), rec("b", 2)};
    normalize_manifest(m);
    save_manifest(dir / "rt.jsonl", m);
    const auto back = load_manifest(dir / "rt.jsonl");
    CHECK(back.records == m.records);
  }

  TEST_CASE("halve") {
    const auto r = stream("a", "real", 4);
    auto [h1, h2] = halve(r);
    CHECK(h1 == std::vector<SampleRecord>{r[0], r[1]});
    CHECK(h2 == std::vector<SampleRecord>{r[2], r[3]});

    const std::vector<SampleRecord> odd(r.begin(), r.begin() + 3);
    auto [o1, o2] = halve(odd);
    CHECK(o1 == std::vector<SampleRecord>{r[0]});
    CHECK(o2 == std::vector<SampleRecord>{r[1]});

    auto [e1, e2] = halve({});
    CHECK(e1.empty());
    CHECK(e2.empty());
  }

  TEST_CASE("four real and four fake frames give the eight listed triplets") {
    const auto r = stream("a", "real", 4);
    const auto f = stream("a", "Deepfakes", 4);
    const auto t = form_triplets(r, f);
    REQUIRE(t.size() == 8);
    using L = std::array<int, 3>;
    const std::vector<std::tuple<SampleRecord, SampleRecord, SampleRecord, L>> expected = {
        {r[0], r[2], f[0], L{0, 0, 1}}, {r[1], r[3], f[1], L{0, 0, 1}}, {f[0], f[2], r[0], L{1, 1, 0}},
        {f[1], f[3], r[1], L{1, 1, 0}}, {r[2], r[0], f[2], L{0, 0, 1}}, {r[3], r[1], f[3], L{0, 0, 1}},
        {f[2], f[0], r[2], L{1, 1, 0}}, {f[3], f[1], r[3], L{1, 1, 0}}};
    for (std::size_t i = 0; i < 8; ++i) {
      CAPTURE(i);
      CHECK(t[i].anchor == std::get<0>(expected[i]));
      CHECK(t[i].positive == std::get<1>(expected[i]));
      CHECK(t[i].negative == std::get<2>(expected[i]));
      CHECK(t[i].labels == std::get<3>(expected[i]));
      CHECK(triplet_violation(t[i]).empty());
    }
  }

  TEST_CASE("two frames per stream give four triplets") {
    CHECK(form_triplets(stream("a", "real", 2), stream("a", "X", 2)).size() == 4);
  }

  TEST_CASE("no fakes gives no triplets") { CHECK(form_triplets(stream("a", "real", 4), {}).empty()); }

  TEST_CASE("form_triplets input errors") {
    CHECK_THROWS_AS(form_triplets(stream("a", "real", 4), stream("b", "X", 4)), ValidationError);
    auto mixed = stream("a", "X", 2);
    mixed.push_back(rec("a", 2, "Y"));
    CHECK_THROWS_AS(form_triplets(stream("a", "real", 4), mixed), ValidationError);
    // fake frame 5 has no real counterpart
    CHECK_THROWS_AS(form_triplets(stream("a", "real", 4), {rec("a", 0, "X"), rec("a", 5, "X")}), ValidationError);
  }

  TEST_CASE("reals outside the fake frames are ignored") {
    // frames 0..7 real, fakes only on 2..5: halves come from the aligned frames
    const auto t = form_triplets(stream("a", "real", 8),
                                 {rec("a", 2, "X"), rec("a", 3, "X"), rec("a", 4, "X"), rec("a", 5, "X")});
    REQUIRE(t.size() == 8);
    CHECK(t[0].anchor.frame_index == 2);
    CHECK(t[0].positive.frame_index == 4);
    for (const auto& x : t) CHECK(triplet_violation(x).empty());
  }

  TEST_CASE("form_triplets ignores input order") {
    auto r = stream("a", "real", 6);
    auto f = stream("a", "X", 6);
    const auto base = form_triplets(r, f);
    Rng rng(4);
    for (int k = 0; k < 10; ++k) {
      std::vector<SampleRecord> rp, fp;
      for (auto i : rng.permutation(r.size())) rp.push_back(r[i]);
      for (auto i : rng.permutation(f.size())) fp.push_back(f[i]);
      const auto t = form_triplets(rp, fp);
      REQUIRE(t.size() == base.size());
      for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(t[i].anchor == base[i].anchor);
        CHECK(t[i].positive == base[i].positive);
        CHECK(t[i].negative == base[i].negative);
      }
    }
  }

  TEST_CASE("violations are detected") {
    const auto t = form_triplets(stream("a", "real", 4), stream("a", "X", 4)).front();
    auto bad = t;
    bad.positive.frame_index = bad.anchor.frame_index;
    CHECK_FALSE(triplet_violation(bad).empty());
    bad = t;
    bad.negative.frame_index += 1;
    CHECK_FALSE(triplet_violation(bad).empty());
    bad = t;
    bad.negative.identity_id = "z";
    CHECK_FALSE(triplet_violation(bad).empty());
    bad = t;
    bad.labels = {1, 1, 0};
    CHECK_FALSE(triplet_violation(bad).empty());
    bad = t;
    bad.negative = bad.positive;
    CHECK_FALSE(triplet_violation(bad).empty());
  }

  TEST_CASE("one identity with two categories gives sixteen triplets") {
    Manifest m;
    for (const auto& s : {stream("a", "real", 4), stream("a", "X", 4), stream("a", "Y", 4)}) {
      m.records.insert(m.records.end(), s.begin(), s.end());
    }
    normalize_manifest(m);
    CHECK(build_triplet_set(m, {"X", "Y"}).size() == 16);
  }

  TEST_CASE("included categories restrict the triplets") {
    Manifest m;
    for (const auto& cat : {"real", "Deepfakes", "Face2Face", "FaceSwap", "NeuralTextures"}) {
      for (const auto& id : {"p", "q"}) {
        const auto s = stream(id, cat, 4);
        m.records.insert(m.records.end(), s.begin(), s.end());
      }
    }
    normalize_manifest(m);
    const auto t = build_triplet_set(m, {"Deepfakes", "NeuralTextures"});
    CHECK(t.size() == 32);
    for (const auto& x : t) {
      const auto& fake = x.anchor.is_fake() ? x.anchor : x.negative;
      CHECK((fake.forgery_category == "Deepfakes" || fake.forgery_category == "NeuralTextures"));
    }
    CHECK(build_triplet_set(m, {"Other"}).empty());
    CHECK_THROWS_AS(build_triplet_set(m, {}), ValidationError);
    CHECK_THROWS_AS(build_triplet_set(m, {"real"}), ValidationError);
  }

  TEST_CASE("random manifests satisfy the invariants and the count formula") {
    Rng rng(2024);
    for (int trial = 0; trial < 30; ++trial) {
      Manifest m;
      std::size_t expected = 0;
      const int ids = 1 + static_cast<int>(rng.below(4));
      for (int i = 0; i < ids; ++i) {
        const std::string id = "id" + std::to_string(i);
        const long frames = static_cast<long>(rng.below(9));
        for (long f = 0; f < frames; ++f) m.records.push_back(rec(id, f));
        for (const auto& cat : {"X", "Y"}) {
          std::size_t nf = 0;
          for (long f = 0; f < frames; ++f) {
            if (rng.below(3) != 0) {
              m.records.push_back(rec(id, f, cat));
              ++nf;
            }
          }
          expected += 4 * (std::min<std::size_t>(frames, nf) / 2);
        }
      }
      normalize_manifest(m);
      const auto t = build_triplet_set(m, {"X", "Y"});
      CHECK(t.size() == expected);
      for (const auto& x : t) CHECK(triplet_violation(x).empty());
    }
  }

  TEST_CASE("select_records and helpers") {
    Manifest m;
    m.records = {rec("a", 0), rec("a", 0, "X"), rec("a", 0, "Y"), rec("b", 0), rec("b", 0, "X")};
    normalize_manifest(m);
    const auto s = select_records(m, {"a"}, {"Y"}, "sub");
    CHECK(s.dataset_name == "sub");
    CHECK(s.records.size() == 2);
    CHECK(identities_of(m) == std::vector<std::string>{"a", "b"});
    CHECK(fake_categories_of(m) == std::vector<std::string>{"X", "Y"});
  }
}
