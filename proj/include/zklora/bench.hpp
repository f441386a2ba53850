#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "zklora/mpi.hpp"

namespace zklora {

// One measurement regime: num_modules identical LoRA modules of shape
// (r x n, d x r) attached to a single-layer synthetic model.
struct BenchRegime {
    std::string id;
    uint32_t num_modules = 1;
    uint32_t n = 64;
    uint32_t d = 64;
    uint32_t r = 8;

    uint64_t lora_size() const { return uint64_t(r) * (uint64_t(n) + d); }
};

struct BenchSpec {
    std::vector<BenchRegime> regimes;
    uint32_t m = 15;  // batch columns per activation (3 sequences x length 5)
    uint32_t repetitions = 3;
    uint64_t seed = 1;
    bool parallel_prove = false;
    uint64_t memory_budget_bytes = uint64_t(1) << 30;
};

// Aggregate row, one per regime.
struct BenchRow {
    std::string regime_id;
    uint32_t num_loras = 0;
    uint64_t avg_lora_size = 0;
    double avg_settings_ms = 0.0;
    double avg_proof_ms = 0.0;
    double avg_verify_ms = 0.0;
    double total_verify_ms = 0.0;
    double median_verify_ms = 0.0;
};

// Long-form sample, one per module per repetition.
struct BenchSample {
    std::string regime_id;
    uint32_t repetition = 0;
    uint32_t module_id = 0;
    uint64_t lora_size = 0;
    double settings_ms = 0.0;
    double proof_ms = 0.0;
    double verify_ms = 0.0;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    std::vector<BenchSample> samples;
    nlohmann::json summary;  // spec + host metadata + rows
};

// The deterministic part of a row: id and the first two columns.
BenchRow bench_row_skeleton(const BenchRegime& regime);

// Rough allocation estimate backing the RegimeTooLarge pre-pass.
uint64_t regime_memory_bytes(const BenchRegime& regime);

BenchResult run_scaling_bench(const BenchSpec& spec);

std::string bench_csv(const std::vector<BenchRow>& rows);
std::string bench_samples_csv(const std::vector<BenchSample>& samples);
std::vector<BenchRow> parse_bench_csv(const std::string& text);

// Writes summary.csv, modules.csv and summary.json under out_dir.
void write_bench_outputs(const BenchResult& result, const std::string& out_dir);

// External reference table (the published scaling measurements).
struct ReferenceRow {
    std::string model;
    uint32_t num_loras = 0;
    uint64_t avg_lora_size = 0;
    double avg_settings = 0.0;  // dimensionless trend data
    double avg_proof = 0.0;
};

std::vector<ReferenceRow> load_reference_table(const std::string& path);

struct TrendCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct TrendReport {
    bool pass = false;
    std::vector<TrendCheck> checks;
    nlohmann::json to_json() const;
};

// Trend-only comparison; absolute times are never compared.
TrendReport compare_reference(std::vector<BenchRow> ours,
                              std::vector<ReferenceRow> reference);

}  // namespace zklora
