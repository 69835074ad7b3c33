#pragma once

#include <filesystem>

#include "laneshift/finetune.hpp"
#include "laneshift/router.hpp"
#include "laneshift/runtime.hpp"

namespace laneshift {

/// A checkpoint/dataset that is missing, truncated, or fails validation.
class ArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_detector(const std::filesystem::path& path, const ModelParams& model);
ModelParams load_detector(const std::filesystem::path& path);

/// Branch checkpoint = owned params + config + source hash. Loading verifies
/// the hash against the given source (prefix-divergence guard).
void save_branch(const std::filesystem::path& path, const Branch& branch);
Branch load_branch(const std::filesystem::path& path,
                   std::shared_ptr<const ModelParams> source);

void save_router(const std::filesystem::path& path, const RouterParams& rp,
                 const CentroidBank& centroids);
std::pair<RouterParams, CentroidBank> load_router(const std::filesystem::path& path);

/// Bundle layout: source.ckpt, router.ckpt, branches/<dist>.ckpt and a
/// bundle.json manifest (source label, branch points, hashes, class table).
void save_bundle(const std::filesystem::path& dir, const RoutedModel& model);
RoutedModel load_bundle(const std::filesystem::path& dir);

}  // namespace laneshift
