#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "abis/error.hpp"

namespace abis {

inline constexpr std::string_view kToolVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

int exit_code_for(ErrorCode code) noexcept;

/// Runs one `abis` invocation. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// File names inside a `synth` output directory.
namespace data_files {
inline constexpr std::string_view kGallery = "gallery.bgal";
inline constexpr std::string_view kRegistry = "registry.jsonl";
inline constexpr std::string_view kMated = "mated.tpl";
inline constexpr std::string_view kMatedLabels = "mated_labels.jsonl";
inline constexpr std::string_view kNonmated = "nonmated.tpl";
inline constexpr std::string_view kNonmatedLabels = "nonmated_labels.jsonl";
inline constexpr std::string_view kGenerator = "generator.json";
inline constexpr std::string_view kManifest = "manifest.json";
}  // namespace data_files

}  // namespace abis
