#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <thread>

#include <CLI11.hpp>

#include "zklora/bench.hpp"

namespace fs = std::filesystem;
using namespace zklora;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void handle_signal(int) { g_stop = 1; }

// JSON config source: {"<subcommand>": {"<long-option>": value, ...}}.
// Explicit flags always win; unknown keys are rejected.
class JsonConfig : public CLI::Config {
 public:
    std::string to_config(const CLI::App*, bool, bool,
                          std::string) const override {
        return "{}\n";
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(input);
        } catch (const nlohmann::json::exception& e) {
            throw CLI::ConfigError(std::string("config is not valid JSON: ") +
                                   e.what());
        }
        if (!j.is_object()) {
            throw CLI::ConfigError("config root must be a JSON object");
        }
        std::vector<CLI::ConfigItem> items;
        auto to_str = [](const nlohmann::json& s) {
            return s.is_string() ? s.get<std::string>() : s.dump();
        };
        std::function<void(const nlohmann::json&,
                           const std::vector<std::string>&)>
            walk = [&](const nlohmann::json& node,
                       const std::vector<std::string>& parents) {
                for (auto it = node.begin(); it != node.end(); ++it) {
                    const auto& v = it.value();
                    if (v.is_object()) {
                        auto deeper = parents;
                        deeper.push_back(it.key());
                        walk(v, deeper);
                        continue;
                    }
                    CLI::ConfigItem item;
                    item.parents = parents;
                    item.name = it.key();
                    if (v.is_array()) {
                        for (const auto& e : v) {
                            item.inputs.push_back(to_str(e));
                        }
                    } else {
                        item.inputs.push_back(to_str(v));
                    }
                    items.push_back(std::move(item));
                }
            };
        walk(j, {});
        return items;
    }
};

std::pair<std::string, uint16_t> parse_addr(const std::string& addr) {
    auto pos = addr.rfind(':');
    if (pos == std::string::npos || pos == 0 || pos + 1 >= addr.size()) {
        throw Error(ErrorKind::UsageError, "address must be HOST:PORT");
    }
    unsigned long port = 0;
    try {
        port = std::stoul(addr.substr(pos + 1));
    } catch (const std::exception&) {
        throw Error(ErrorKind::UsageError, "bad port in " + addr);
    }
    if (port > 65535) {
        throw Error(ErrorKind::UsageError, "bad port in " + addr);
    }
    return {addr.substr(0, pos), static_cast<uint16_t>(port)};
}

DeploymentProfile profile_from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path);
    }
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    return DeploymentProfile::from_json_text(text);
}

std::string resolve_weights(const std::string& path) {
    if (fs::is_directory(path)) {
        return (fs::path(path) / "lora.zklt").string();
    }
    return path;
}

void print_report(const VerificationReport& report) {
    std::cout << (report.accept ? "Accept" : "Reject") << std::endl;
    for (const auto& mod : report.modules) {
        if (!mod.accepted) {
            std::cerr << "module " << mod.module_id << ": "
                      << failure_reason_name(mod.reason) << std::endl;
        }
    }
}

int cmd_gen_model(const SynthSpec& ss, const std::string& out_dir,
                  uint32_t batch) {
    SyntheticModel model = gen_synthetic(ss);
    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    write_json_file((dir / "model.json").string(), model.config.to_json());
    write_tensors((dir / "model.zklt").string(), model.model_tensors);
    write_json_file((dir / "manifest.json").string(),
                    model.manifest.to_json());
    write_tensors((dir / "lora.zklt").string(), model.lora_tensors);

    Matrix input(model.config.input_dim(), batch);
    std::mt19937_64 gen(ss.seed ^ 0x1a2b3c4d5e6fULL);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& x : input.data) {
        x = dist(gen);
    }
    TensorMap in;
    in["input"] = tensor_from_matrix(input);
    write_tensors((dir / "input.zklt").string(), in);

    std::cout << "wrote model.json model.zklt manifest.json lora.zklt "
                 "input.zklt under "
              << out_dir << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Verifiable LoRA inference: two-party protocol, committed "
                 "weights, per-module proofs"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "JSON config file: {\"<subcommand>\": {\"<option>\": "
                   "value}}; explicit flags override it");
    app.config_formatter(std::make_shared<JsonConfig>());
    app.allow_config_extras(CLI::config_extras_mode::error);

    // gen-model
    auto* gen = app.add_subcommand(
        "gen-model", "Generate a synthetic model + LoRA stack");
    SynthSpec ss;
    std::string gen_out;
    uint32_t gen_batch = 15;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", ss.seed, "deterministic generator seed");
    gen->add_option("--model-id", ss.model_id, "model identifier");
    gen->add_option("--layers", ss.layers, "number of layers");
    gen->add_option("--slots", ss.slots_per_layer, "linear slots per layer");
    gen->add_option("--n", ss.n, "input dim of the first slot");
    gen->add_option("--d", ss.d, "output dim of the first slot");
    gen->add_option("--rank", ss.rank, "LoRA rank");
    gen->add_option("--lora-targets", ss.lora_targets,
                    "number of leading slots that get a LoRA module");
    gen->add_option("--activation", ss.activation, "relu | none");
    gen->add_option("--scale-bits", ss.scale_bits, "fixed-point bits f");
    gen->add_option("--batch", gen_batch, "columns in the sample input");
    gen->fallthrough();

    // contribute
    auto* con = app.add_subcommand(
        "contribute", "Serve private LoRA weights to base-model users");
    std::string con_listen = "127.0.0.1:0";
    std::string con_weights, con_manifest, con_profile, con_state;
    int64_t con_budget = -1;
    uint64_t con_seed = 0;
    bool con_seed_set = false, con_parallel = false;
    con->add_option("--listen", con_listen, "HOST:PORT (port 0 = ephemeral)");
    con->add_option("--weights", con_weights,
                    "LoRA tensor file, or directory containing lora.zklt")
        ->required();
    con->add_option("--manifest", con_manifest, "module manifest JSON")
        ->required();
    con->add_option("--budget", con_budget,
                    "opening budget per commitment set (default floor(r/2))");
    con->add_option("--state", con_state,
                    "state directory for budget + per-session witnesses");
    con->add_option("--profile", con_profile, "deployment profile JSON file");
    con->add_option("--insecure-seed", con_seed,
                    "seed blinders deterministically (TESTS ONLY; breaks "
                    "hiding)")
        ->each([&con_seed_set](const std::string&) { con_seed_set = true; });
    con->add_flag("--parallel-prove", con_parallel,
                  "prove a session's modules in parallel");
    con->fallthrough();

    // infer
    auto* inf = app.add_subcommand(
        "infer", "Run a forward pass with remote LoRA modules and verify");
    std::string inf_connect, inf_model, inf_input, inf_out, inf_report;
    std::string inf_profile, inf_session;
    uint64_t inf_seed = 0;
    bool inf_seed_set = false;
    inf->add_option("--connect", inf_connect, "contributor HOST:PORT")
        ->required();
    inf->add_option("--model", inf_model,
                    "model directory (model.json + model.zklt)")
        ->required();
    inf->add_option("--input", inf_input, "tensor file with tensor 'input'")
        ->required();
    inf->add_option("--out", inf_out, "output tensor file")->required();
    inf->add_option("--report", inf_report, "verification report JSON")
        ->required();
    inf->add_option("--profile", inf_profile, "deployment profile JSON file");
    inf->add_option("--session", inf_session,
                    "directory for activation records (enables offline "
                    "re-verification)");
    inf->add_option("--seed", inf_seed, "deterministic session id (tests)")
        ->each([&inf_seed_set](const std::string&) { inf_seed_set = true; });
    inf->fallthrough();

    // prove
    auto* prv = app.add_subcommand(
        "prove", "Re-prove a persisted session offline");
    std::string prv_witness, prv_out, prv_budget;
    prv->add_option("--witness", prv_witness,
                    "session witness directory (state/sessions/<hex>)")
        ->required();
    prv->add_option("--out", prv_out, "output directory for .zklp files")
        ->required();
    prv->add_option("--budget-file", prv_budget,
                    "budget ledger (default: budget.json two levels up)");
    prv->fallthrough();

    // verify
    auto* ver = app.add_subcommand(
        "verify", "Verify a directory of proofs against a persisted session");
    std::string ver_proofs, ver_session, ver_report;
    ver->add_option("--proofs", ver_proofs, "directory of .zklp files")
        ->required();
    ver->add_option("--session", ver_session, "user session directory")
        ->required();
    ver->add_option("--report", ver_report, "verification report JSON")
        ->required();
    ver->fallthrough();

    // bench
    auto* ben = app.add_subcommand(
        "bench", "Scaling benchmark over loopback sessions");
    std::string ben_out, ben_regimes, ben_reference;
    BenchSpec bs;
    uint64_t ben_mem_mb = 1024;
    ben->add_option("--out", ben_out, "output directory")->required();
    ben->add_option("--regimes", ben_regimes,
                    "comma list of COUNT:N:D:R regimes, e.g. "
                    "8:64:64:8,16:64:64:8")
        ->required();
    ben->add_option("--reps", bs.repetitions, "repetitions per regime");
    ben->add_option("--m", bs.m, "batch columns per activation");
    ben->add_option("--seed", bs.seed, "deterministic bench seed");
    ben->add_flag("--parallel-prove", bs.parallel_prove,
                  "prove each session's modules in parallel");
    ben->add_option("--memory-budget-mb", ben_mem_mb,
                    "RegimeTooLarge threshold");
    ben->add_option("--reference", ben_reference,
                    "external reference CSV for the trend comparison");
    ben->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen_model(ss, gen_out, gen_batch);
        }

        if (con->parsed()) {
            auto [host, port] = parse_addr(con_listen);
            ServeConfig sc;
            sc.host = host;
            sc.port = port;
            if (!con_profile.empty()) {
                sc.profile = profile_from_file(con_profile);
            }
            sc.manifest =
                LoraManifest::from_json(read_json_file(con_manifest));
            sc.lora_tensors = read_tensors(resolve_weights(con_weights));
            if (con_budget >= 0) {
                sc.budget_limit = static_cast<uint64_t>(con_budget);
            }
            if (!con_state.empty()) {
                sc.state_dir = con_state;
            }
            if (con_seed_set) {
                sc.insecure_seed = con_seed;
            }
            sc.parallel_prove = con_parallel;
            ContributorServer server(std::move(sc));
            server.start();
            std::cout << "listening on " << host << ":" << server.port()
                      << std::endl;
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            while (!g_stop) {
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
            }
            server.stop();
            return 0;
        }

        if (inf->parsed()) {
            auto [host, port] = parse_addr(inf_connect);
            InferConfig ic;
            ic.host = host;
            ic.port = port;
            if (!inf_profile.empty()) {
                ic.profile = profile_from_file(inf_profile);
            }
            fs::path mdir(inf_model);
            ic.model = ModelConfig::from_json(
                read_json_file((mdir / "model.json").string()));
            ic.model_tensors = read_tensors((mdir / "model.zklt").string());
            if (!inf_session.empty()) {
                ic.session_dir = inf_session;
            }
            std::optional<SeededRandom> srng;
            if (inf_seed_set) {
                srng.emplace(inf_seed);
                ic.rng = &*srng;
            }
            TensorMap in = read_tensors(inf_input);
            auto it = in.find("input");
            if (it == in.end()) {
                throw Error(ErrorKind::UsageError,
                            "no tensor named 'input' in " + inf_input);
            }
            InferenceResult res =
                run_user_inference(ic, matrix_from_tensor(it->second));
            TensorMap out;
            out["output"] = tensor_from_matrix(res.output);
            write_tensors(inf_out, out);
            write_json_file(inf_report, res.report.to_json());
            print_report(res.report);
            return res.report.accept ? 0 : 1;
        }

        if (prv->parsed()) {
            std::string budget_path = prv_budget;
            if (budget_path.empty()) {
                fs::path guess = fs::path(prv_witness).parent_path()
                                     .parent_path() /
                                 "budget.json";
                if (fs::exists(guess)) {
                    budget_path = guess.string();
                }
            }
            if (!budget_path.empty()) {
                OpeningBudget budget = OpeningBudget::load(budget_path);
                offline_prove(prv_witness, prv_out, &budget);
                budget.save(budget_path);
            } else {
                offline_prove(prv_witness, prv_out, nullptr);
            }
            std::cout << "wrote proofs to " << prv_out << std::endl;
            return 0;
        }

        if (ver->parsed()) {
            VerificationReport report = offline_verify(ver_proofs, ver_session);
            write_json_file(ver_report, report.to_json());
            print_report(report);
            return report.accept ? 0 : 1;
        }

        if (ben->parsed()) {
            bs.memory_budget_bytes = ben_mem_mb << 20;
            std::stringstream rs(ben_regimes);
            std::string one;
            size_t idx = 0;
            while (std::getline(rs, one, ',')) {
                std::array<uint32_t, 4> f{};
                std::stringstream fields(one);
                std::string cell;
                size_t fi = 0;
                while (std::getline(fields, cell, ':')) {
                    if (fi >= 4) {
                        break;
                    }
                    f[fi++] = static_cast<uint32_t>(std::stoul(cell));
                }
                if (fi != 4) {
                    throw Error(ErrorKind::UsageError,
                                "regime must be COUNT:N:D:R, got " + one);
                }
                char id[16];
                std::snprintf(id, sizeof(id), "r%02zu", idx++);
                bs.regimes.push_back(BenchRegime{id, f[0], f[1], f[2], f[3]});
            }
            BenchResult result = run_scaling_bench(bs);
            write_bench_outputs(result, ben_out);
            std::cout << bench_csv(result.rows);
            if (!ben_reference.empty()) {
                TrendReport trend = compare_reference(
                    result.rows, load_reference_table(ben_reference));
                write_json_file(
                    (fs::path(ben_out) / "trend.json").string(),
                    trend.to_json());
                for (const auto& check : trend.checks) {
                    std::cout << (check.pass ? "PASS " : "FAIL ") << check.name
                              << ": " << check.detail << "\n";
                }
                std::cout << "trend " << (trend.pass ? "PASS" : "FAIL")
                          << std::endl;
                return trend.pass ? 0 : 1;
            }
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << error_kind_name(e.kind()) << ": " << e.what()
                  << std::endl;
        return e.kind() == ErrorKind::UsageError ? 2 : 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 3;
    }
    return 2;
}
