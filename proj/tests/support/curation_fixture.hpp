#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tristyle/hf_curation.hpp"
#include "tristyle/image_io.hpp"
#include "tristyle/tensor.hpp"

namespace tristyle::fixtures {

inline StageItem write_reference(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_png(dir / "reference.png", Tensor({3, 8, 8}, 0.5f));
  return {"ref", dir / "reference.png", "a blue house beside a tree"};
}

// n distinct small PNG candidates for one stage, ids s<stage>-<k>.
inline std::vector<CandidateRecord> write_candidates(const std::filesystem::path& dir, int stage, int n) {
  std::filesystem::create_directories(dir);
  std::vector<CandidateRecord> out;
  for (int k = 0; k < n; ++k) {
    char id[32];
    std::snprintf(id, sizeof id, "s%d-%04d", stage, k);
    Tensor img({3, 8, 8}, static_cast<float>(k % 200) / 200.0f);
    const auto path = dir / (std::string(id) + ".png");
    write_png(path, img);
    out.push_back({id, path, static_cast<std::uint64_t>(k), stage, "a red boat"});
  }
  return out;
}

// Drives a session through both transitions, selecting exactly the quota
// each time; returns the three frozen dataset sizes.
inline std::vector<int> run_staged_loop(CurationStore& store, const std::filesystem::path& images,
                                        const StageQuotas& quotas, int candidates_per_stage) {
  const auto s = store.create_session("loop", write_reference(images), quotas);
  std::vector<int> sizes = {store.session(s.id).datasets.at(1).size()};
  for (int stage = 1; stage <= 2; ++stage) {
    const auto recs = write_candidates(images / ("stage" + std::to_string(stage)), stage, candidates_per_stage);
    store.add_candidates(s.id, recs);
    std::vector<std::string> ids;
    for (int k = 0; k < quotas.quota_after(stage); ++k) ids.push_back(recs[static_cast<std::size_t>(k)].id);
    store.select(s.id, ids);
    sizes.push_back(store.promote(s.id).size());
  }
  return sizes;
}

}  // namespace tristyle::fixtures
