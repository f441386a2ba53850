#include "zklora/bench.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

namespace zklora {

namespace fs = std::filesystem;

namespace {

constexpr const char* kBenchHeader =
    "regime_id,num_loras,avg_lora_size,avg_settings_ms,avg_proof_ms,"
    "avg_verify_ms,total_verify_ms,median_verify_ms";
constexpr const char* kSamplesHeader =
    "regime_id,repetition,module_id,lora_size,settings_ms,proof_ms,verify_ms";

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string fmt_ms(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (double x : xs) {
        sum += x;
    }
    return sum / double(xs.size());
}

double median_of(std::vector<double> xs) {
    if (xs.empty()) {
        return 0.0;
    }
    std::sort(xs.begin(), xs.end());
    size_t mid = xs.size() / 2;
    if (xs.size() % 2 == 1) {
        return xs[mid];
    }
    return 0.5 * (xs[mid - 1] + xs[mid]);
}

// Least-squares slope; caller guards against degenerate x-spread.
double ls_slope(const std::vector<std::pair<double, double>>& pts) {
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : pts) {
        mx += x;
        my += y;
    }
    mx /= double(pts.size());
    my /= double(pts.size());
    double sxx = 0.0, sxy = 0.0;
    for (const auto& [x, y] : pts) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if (sxx == 0.0) {
        return 0.0;
    }
    return sxy / sxx;
}

void check_regime(const BenchRegime& regime) {
    if (regime.id.empty() || regime.id.find(',') != std::string::npos ||
        regime.id.find('\n') != std::string::npos) {
        throw Error(ErrorKind::UsageError,
                    "regime id must be non-empty and csv-safe");
    }
    if (regime.num_modules == 0 || regime.n == 0 || regime.d == 0 ||
        regime.r == 0) {
        throw Error(ErrorKind::UsageError,
                    "regime dims must be positive: " + regime.id);
    }
}

nlohmann::json host_metadata() {
    nlohmann::json host;
    struct utsname un{};
    if (uname(&un) == 0) {
        host["sysname"] = un.sysname;
        host["release"] = un.release;
        host["machine"] = un.machine;
    }
    std::ifstream cpuinfo("/proc/cpuinfo");
    std::string line;
    while (std::getline(cpuinfo, line)) {
        if (line.rfind("model name", 0) == 0) {
            auto pos = line.find(':');
            if (pos != std::string::npos) {
                host["cpu"] = line.substr(pos + 2);
            }
            break;
        }
    }
    host["hardware_concurrency"] = std::thread::hardware_concurrency();
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ",
                  std::gmtime(&now));
    host["timestamp"] = stamp;
    return host;
}

nlohmann::json row_json(const BenchRow& row) {
    return nlohmann::json{{"regime_id", row.regime_id},
                          {"num_loras", row.num_loras},
                          {"avg_lora_size", row.avg_lora_size},
                          {"avg_settings_ms", row.avg_settings_ms},
                          {"avg_proof_ms", row.avg_proof_ms},
                          {"avg_verify_ms", row.avg_verify_ms},
                          {"total_verify_ms", row.total_verify_ms},
                          {"median_verify_ms", row.median_verify_ms}};
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(item);
    }
    return out;
}

}  // namespace

BenchRow bench_row_skeleton(const BenchRegime& regime) {
    BenchRow row;
    row.regime_id = regime.id;
    row.num_loras = regime.num_modules;
    row.avg_lora_size = regime.lora_size();
    return row;
}

uint64_t regime_memory_bytes(const BenchRegime& regime) {
    uint64_t mods = regime.num_modules;
    uint64_t n = regime.n, d = regime.d, r = regime.r;
    uint64_t weights = mods * n * d * 8;          // base weight per slot
    uint64_t lora = mods * regime.lora_size() * 8;
    uint64_t commits = mods * (r + d) * 32;
    uint64_t key = 32 * std::max<uint64_t>({n, d, r});
    // Tensors are held both as file payload and parsed doubles, plus
    // transient copies during matrix ops.
    return 3 * weights + 3 * lora + 2 * commits + key;
}

BenchResult run_scaling_bench(const BenchSpec& spec) {
    if (spec.regimes.empty()) {
        throw Error(ErrorKind::UsageError, "at least one bench regime");
    }
    if (spec.repetitions == 0) {
        throw Error(ErrorKind::UsageError, "repetitions must be positive");
    }
    if (spec.m == 0) {
        throw Error(ErrorKind::UsageError, "batch m must be positive");
    }
    for (const auto& regime : spec.regimes) {
        check_regime(regime);
        uint64_t need = regime_memory_bytes(regime);
        if (need > spec.memory_budget_bytes) {
            throw Error(ErrorKind::RegimeTooLarge,
                        "regime " + regime.id + " needs ~" +
                            std::to_string(need >> 20) + " MiB, budget " +
                            std::to_string(spec.memory_budget_bytes >> 20) +
                            " MiB");
        }
    }

    BenchResult out;
    for (size_t ri = 0; ri < spec.regimes.size(); ++ri) {
        const BenchRegime& regime = spec.regimes[ri];
        BenchRow row = bench_row_skeleton(regime);
        std::vector<double> settings_all, proof_all, verify_all, totals;

        for (uint32_t rep = 0; rep < spec.repetitions; ++rep) {
            uint64_t run_seed =
                splitmix64(spec.seed ^ (uint64_t(ri) * 0x100000001b3ULL +
                                        uint64_t(rep) + 1));
            SynthSpec ss;
            ss.seed = run_seed;
            ss.model_id = regime.id;
            ss.layers = 1;
            ss.slots_per_layer = regime.num_modules;
            ss.n = regime.n;
            ss.d = regime.d;
            ss.rank = regime.r;
            SyntheticModel model = gen_synthetic(ss);

            ServeConfig sc;
            sc.manifest = model.manifest;
            sc.lora_tensors = model.lora_tensors;
            sc.budget_limit = 1;  // fresh server per repetition, one session
            sc.insecure_seed = splitmix64(run_seed);
            sc.parallel_prove = spec.parallel_prove;
            ContributorServer server(std::move(sc));
            server.start();

            InferConfig ic;
            ic.host = "127.0.0.1";
            ic.port = server.port();
            ic.model = model.config;
            ic.model_tensors = model.model_tensors;
            SeededRandom session_rng(splitmix64(run_seed + 1));
            ic.rng = &session_rng;

            Matrix input(model.config.input_dim(), spec.m);
            std::mt19937_64 gen(splitmix64(run_seed + 2));
            std::uniform_real_distribution<double> dist(-1.0, 1.0);
            for (auto& x : input.data) {
                x = dist(gen);
            }

            InferenceResult res = run_user_inference(ic, input);
            server.stop();
            if (!res.report.accept) {
                throw Error(ErrorKind::Internal,
                            "bench session rejected in regime " + regime.id);
            }

            double rep_total = res.report.total_verify_millis;
            totals.push_back(rep_total);
            for (const auto& mod : res.report.modules) {
                double settings = res.settings_ms.at(mod.module_id);
                double proof = res.prove_ms.at(mod.module_id);
                settings_all.push_back(settings);
                proof_all.push_back(proof);
                verify_all.push_back(mod.verify_millis);
                out.samples.push_back(BenchSample{regime.id, rep,
                                                  mod.module_id,
                                                  regime.lora_size(), settings,
                                                  proof, mod.verify_millis});
            }
        }

        row.avg_settings_ms = mean_of(settings_all);
        row.avg_proof_ms = mean_of(proof_all);
        row.avg_verify_ms = mean_of(verify_all);
        row.total_verify_ms = mean_of(totals);
        row.median_verify_ms = median_of(verify_all);
        out.rows.push_back(std::move(row));
    }

    std::stable_sort(out.rows.begin(), out.rows.end(),
                     [](const BenchRow& a, const BenchRow& b) {
                         return a.regime_id < b.regime_id;
                     });
    std::stable_sort(out.samples.begin(), out.samples.end(),
                     [](const BenchSample& a, const BenchSample& b) {
                         if (a.regime_id != b.regime_id) {
                             return a.regime_id < b.regime_id;
                         }
                         if (a.repetition != b.repetition) {
                             return a.repetition < b.repetition;
                         }
                         return a.module_id < b.module_id;
                     });

    nlohmann::json regimes = nlohmann::json::array();
    for (const auto& regime : spec.regimes) {
        regimes.push_back({{"id", regime.id},
                           {"num_modules", regime.num_modules},
                           {"n", regime.n},
                           {"d", regime.d},
                           {"r", regime.r}});
    }
    out.summary["spec"] = {{"regimes", regimes},
                           {"m", spec.m},
                           {"repetitions", spec.repetitions},
                           {"seed", spec.seed},
                           {"parallel_prove", spec.parallel_prove}};
    out.summary["host"] = host_metadata();
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : out.rows) {
        rows.push_back(row_json(row));
    }
    out.summary["rows"] = rows;
    return out;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream os;
    os << kBenchHeader << '\n';
    for (const auto& r : rows) {
        os << r.regime_id << ',' << r.num_loras << ',' << r.avg_lora_size
           << ',' << fmt_ms(r.avg_settings_ms) << ',' << fmt_ms(r.avg_proof_ms)
           << ',' << fmt_ms(r.avg_verify_ms) << ','
           << fmt_ms(r.total_verify_ms) << ',' << fmt_ms(r.median_verify_ms)
           << '\n';
    }
    return os.str();
}

std::string bench_samples_csv(const std::vector<BenchSample>& samples) {
    std::ostringstream os;
    os << kSamplesHeader << '\n';
    for (const auto& s : samples) {
        os << s.regime_id << ',' << s.repetition << ',' << s.module_id << ','
           << s.lora_size << ',' << fmt_ms(s.settings_ms) << ','
           << fmt_ms(s.proof_ms) << ',' << fmt_ms(s.verify_ms) << '\n';
    }
    return os.str();
}

std::vector<BenchRow> parse_bench_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != kBenchHeader) {
        throw Error(ErrorKind::CorruptHeader, "unexpected bench csv header");
    }
    std::vector<BenchRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        auto cells = split_csv_line(line);
        if (cells.size() != 8) {
            throw Error(ErrorKind::CorruptHeader, "bench csv row width");
        }
        BenchRow row;
        try {
            row.regime_id = cells[0];
            row.num_loras = static_cast<uint32_t>(std::stoul(cells[1]));
            row.avg_lora_size = std::stoull(cells[2]);
            row.avg_settings_ms = std::stod(cells[3]);
            row.avg_proof_ms = std::stod(cells[4]);
            row.avg_verify_ms = std::stod(cells[5]);
            row.total_verify_ms = std::stod(cells[6]);
            row.median_verify_ms = std::stod(cells[7]);
        } catch (const std::exception&) {
            throw Error(ErrorKind::CorruptHeader, "bench csv cell: " + line);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_bench_outputs(const BenchResult& result,
                         const std::string& out_dir) {
    fs::create_directories(out_dir);
    auto dump = [](const fs::path& path, const std::string& text) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::IoError, "cannot open " + path.string());
        }
        out << text;
        if (!out) {
            throw Error(ErrorKind::IoError, "short write to " + path.string());
        }
    };
    dump(fs::path(out_dir) / "summary.csv", bench_csv(result.rows));
    dump(fs::path(out_dir) / "modules.csv", bench_samples_csv(result.samples));
    dump(fs::path(out_dir) / "summary.json", result.summary.dump(2) + "\n");
}

std::vector<ReferenceRow> load_reference_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path);
    }
    std::string line;
    std::vector<ReferenceRow> rows;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        if (!header_seen) {
            if (line != "model,num_loras,avg_lora_size,avg_settings,avg_proof") {
                throw Error(ErrorKind::CorruptHeader,
                            "unexpected reference header: " + line);
            }
            header_seen = true;
            continue;
        }
        auto cells = split_csv_line(line);
        if (cells.size() != 5) {
            throw Error(ErrorKind::CorruptHeader, "reference row: " + line);
        }
        ReferenceRow row;
        try {
            row.model = cells[0];
            row.num_loras = static_cast<uint32_t>(std::stoul(cells[1]));
            row.avg_lora_size = std::stoull(cells[2]);
            row.avg_settings = std::stod(cells[3]);
            row.avg_proof = std::stod(cells[4]);
        } catch (const std::exception&) {
            throw Error(ErrorKind::CorruptHeader, "reference cell: " + line);
        }
        rows.push_back(std::move(row));
    }
    if (!header_seen) {
        throw Error(ErrorKind::CorruptHeader, "reference table is empty");
    }
    return rows;
}

nlohmann::json TrendReport::to_json() const {
    nlohmann::json checks_json = nlohmann::json::array();
    for (const auto& c : checks) {
        checks_json.push_back(
            {{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    }
    return nlohmann::json{{"pass", pass}, {"checks", checks_json}};
}

TrendReport compare_reference(std::vector<BenchRow> ours,
                              std::vector<ReferenceRow> reference) {
    TrendReport report;
    auto add = [&report](const std::string& name, bool pass,
                         const std::string& detail) {
        report.checks.push_back(TrendCheck{name, pass, detail});
    };
    if (ours.empty()) {
        add("rows_present", false, "no measured rows");
        report.pass = false;
        return report;
    }
    std::sort(ours.begin(), ours.end(),
              [](const BenchRow& a, const BenchRow& b) {
                  if (a.avg_lora_size != b.avg_lora_size) {
                      return a.avg_lora_size < b.avg_lora_size;
                  }
                  return a.regime_id < b.regime_id;
              });
    std::sort(reference.begin(), reference.end(),
              [](const ReferenceRow& a, const ReferenceRow& b) {
                  return a.avg_lora_size < b.avg_lora_size;
              });

    // Collapse duplicate sizes by averaging so shuffled or repeated regimes
    // cannot change the verdict.
    auto by_size = [&ours](auto getter) {
        std::vector<std::pair<double, double>> pts;
        for (size_t i = 0; i < ours.size();) {
            size_t j = i;
            double sum = 0.0;
            while (j < ours.size() &&
                   ours[j].avg_lora_size == ours[i].avg_lora_size) {
                sum += getter(ours[j]);
                ++j;
            }
            pts.emplace_back(double(ours[i].avg_lora_size),
                             sum / double(j - i));
            i = j;
        }
        return pts;
    };

    bool size_spread = false;
    {
        auto pts = by_size([](const BenchRow& r) { return r.avg_settings_ms; });
        size_spread = pts.size() >= 2;
    }

    auto series_trend = [&](const std::string& name, auto getter) {
        auto pts = by_size(getter);
        if (pts.size() < 2) {
            add(name, true, "skipped: fewer than two distinct sizes");
            return;
        }
        bool nondecreasing = true;
        for (size_t i = 1; i < pts.size(); ++i) {
            if (pts[i].second < pts[i - 1].second) {
                nondecreasing = false;
            }
        }
        bool grew = pts.back().second > pts.front().second;
        std::ostringstream detail;
        for (size_t i = 0; i < pts.size(); ++i) {
            detail << (i ? " -> " : "") << fmt_ms(pts[i].second);
        }
        add(name, nondecreasing && grew, detail.str());
    };
    series_trend("settings_nondecreasing_in_size",
                 [](const BenchRow& r) { return r.avg_settings_ms; });
    series_trend("proof_nondecreasing_in_size",
                 [](const BenchRow& r) { return r.avg_proof_ms; });

    // Total verify vs module count: positive least-squares slope.
    {
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : ours) {
            pts.emplace_back(double(r.num_loras), r.total_verify_ms);
        }
        bool count_spread = false;
        for (const auto& r : ours) {
            if (r.num_loras != ours.front().num_loras) {
                count_spread = true;
            }
        }
        if (!count_spread) {
            if (!size_spread) {
                add("verify_slope_vs_count", false,
                    "no spread in module count or size");
            } else {
                add("verify_slope_vs_count", true,
                    "skipped: single module count");
            }
        } else {
            double slope = ls_slope(pts);
            add("verify_slope_vs_count", slope > 0.0,
                "slope " + fmt_ms(slope) + " ms/module");
        }
    }

    // Direction agreement with the reference table (trend only; the
    // reference numbers are treated as dimensionless).
    if (reference.size() >= 2 && size_spread) {
        std::vector<std::pair<double, double>> ref_settings, ref_proof;
        for (const auto& r : reference) {
            ref_settings.emplace_back(double(r.avg_lora_size), r.avg_settings);
            ref_proof.emplace_back(double(r.avg_lora_size), r.avg_proof);
        }
        double ref_s = ls_slope(ref_settings);
        double ref_p = ls_slope(ref_proof);
        auto ours_settings =
            by_size([](const BenchRow& r) { return r.avg_settings_ms; });
        auto ours_proof =
            by_size([](const BenchRow& r) { return r.avg_proof_ms; });
        double our_s = ls_slope(ours_settings);
        double our_p = ls_slope(ours_proof);
        bool agree = ref_s > 0.0 && ref_p > 0.0 && our_s > 0.0 && our_p > 0.0;
        add("direction_agrees_with_reference", agree,
            "reference slopes " + fmt_ms(ref_s) + "/" + fmt_ms(ref_p) +
                ", ours " + fmt_ms(our_s) + "/" + fmt_ms(our_p));
    } else if (!reference.empty()) {
        add("direction_agrees_with_reference", true,
            "skipped: not enough spread to compare");
    }

    report.pass = true;
    for (const auto& c : report.checks) {
        if (!c.pass) {
            report.pass = false;
        }
    }
    return report;
}

}  // namespace zklora
