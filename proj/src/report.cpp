#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "abis/eval.hpp"
#include "abis/util.hpp"

namespace abis {
namespace {

using ojson = nlohmann::ordered_json;

std::string num(double v) { return fmt::format("{:.9g}", v); }

// Non-finite values become null; finite ones keep the CSV's 9 digits.
ojson jnum(double v) {
  if (!std::isfinite(v)) return nullptr;
  return std::stod(num(v));
}

ojson op_json(const OperatingPoint& op) {
  ojson j;
  j["target_fpir"] = jnum(op.target_fpir);
  j["threshold"] = jnum(op.threshold);
  j["fpir"] = jnum(op.fpir.rate);
  j["fpir_ci"] = {jnum(op.fpir_ci.lo), jnum(op.fpir_ci.hi)};
  j["fnir"] = jnum(op.fnir.rate);
  j["fnir_ci"] = {jnum(op.fnir_ci.lo), jnum(op.fnir_ci.hi)};
  j["fnir_rank1"] = jnum(op.fnir_rank1.rate);
  j["fnir_rank1_ci"] = {jnum(op.fnir_rank1_ci.lo), jnum(op.fnir_rank1_ci.hi)};
  j["n_fp"] = op.fpir.count;
  j["n_nonmated"] = op.fpir.total;
  j["n_fn"] = op.fnir.count;
  j["n_fn_rank1"] = op.fnir_rank1.count;
  j["n_mated"] = op.fnir.total;
  return j;
}

std::string op_csv_fields(const OperatingPoint& op) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{}", num(op.threshold), num(op.fpir.rate),
                     num(op.fpir_ci.lo), num(op.fpir_ci.hi), num(op.fnir.rate), num(op.fnir_ci.lo),
                     num(op.fnir_ci.hi), num(op.fnir_rank1.rate), op.fpir.count, op.fpir.total, op.fnir.count,
                     op.fnir.total);
}

constexpr const char* kOpColumns =
    "threshold,fpir,fpir_lo,fpir_hi,fnir,fnir_lo,fnir_hi,fnir_rank1,n_fp,n_nonmated,n_fn,n_mated";

}  // namespace

std::string det_to_csv(std::span<const DetPoint> points) {
  std::string out = "threshold,fpir,fnir,n_fp,n_nonmated,n_fn,n_mated\n";
  for (const auto& p : points) {
    out += fmt::format("{},{},{},{},{},{},{}\n", num(p.threshold), num(p.fpir), num(p.fnir), p.n_fp, p.n_nonmated,
                       p.n_fn, p.n_mated);
  }
  return out;
}

std::string det_to_json(std::span<const DetPoint> points) {
  ojson arr = ojson::array();
  for (const auto& p : points) {
    ojson j;
    j["threshold"] = jnum(p.threshold);
    j["fpir"] = jnum(p.fpir);
    j["fnir"] = jnum(p.fnir);
    j["n_fp"] = p.n_fp;
    j["n_nonmated"] = p.n_nonmated;
    j["n_fn"] = p.n_fn;
    j["n_mated"] = p.n_mated;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string combination_to_csv(std::span<const CombinationRow> rows) {
  std::string out = fmt::format("subset,target_fpir,{}\n", kOpColumns);
  for (const auto& r : rows) out += fmt::format("{},{},{}\n", r.subset, num(r.op.target_fpir), op_csv_fields(r.op));
  return out;
}

std::string combination_to_json(std::span<const CombinationRow> rows) {
  ojson arr = ojson::array();
  for (const auto& r : rows) {
    ojson j;
    j["subset"] = r.subset;
    j.update(op_json(r.op));
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
  std::string out = fmt::format("n,{}\n", kOpColumns);
  for (const auto& r : rows) out += fmt::format("{},{}\n", r.n, op_csv_fields(r.op));
  return out;
}

std::string sweep_to_json(std::span<const SweepRow> rows) {
  ojson arr = ojson::array();
  for (const auto& r : rows) {
    ojson j;
    j["n"] = r.n;
    j.update(op_json(r.op));
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string operating_point_to_json(const OperatingPoint& op) { return op_json(op).dump(2) + "\n"; }

void emit_report(std::string_view content, const std::filesystem::path& path) { write_text_file(path, content); }

std::string manifest_to_json(const RunManifest& m) {
  ojson j;
  j["command"] = m.command;
  j["tool_version"] = m.tool_version;
  j["seed"] = m.seed;
  j["config_sha256"] = m.config_sha256;
  auto pairs = [](const auto& v) {
    ojson o = ojson::object();
    for (const auto& [k, val] : v) o[k] = val;
    return o;
  };
  j["parameters"] = pairs(m.parameters);
  j["inputs"] = pairs(m.input_checksums);
  j["outputs"] = pairs(m.output_checksums);
  j["timings_seconds"] = pairs(m.timings_seconds);
  return j.dump(2) + "\n";
}

}  // namespace abis
