#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "zklora/transcript.hpp"

using namespace zklora;

namespace {

const DeploymentProfile& profile() {
    return DeploymentProfile::default_profile();
}

std::span<const uint8_t> bytes_of(const Bytes& b) {
    return std::span<const uint8_t>(b.data(), b.size());
}

std::string state_hex(const Transcript& t) { return hex_encode(t.state()); }

}  // namespace

TEST_CASE("replays the frozen hash-chain oracle vectors") {
    std::ifstream in(std::string(ZKLORA_TEST_DATA_DIR) +
                     "/transcript_vectors.json");
    REQUIRE(in.good());
    nlohmann::json vectors = nlohmann::json::parse(in);

    std::ostringstream p_dec;
    p_dec << field_order();
    CHECK(vectors.at("modulus").get<std::string>() == p_dec.str());

    size_t cases = 0;
    for (const auto& c : vectors.at("cases")) {
        INFO("case ", c.at("name").get<std::string>());
        Transcript t(profile());
        for (const auto& step : c.at("steps")) {
            std::string op = step.at("op").get<std::string>();
            std::string label = step.at("label").get<std::string>();
            if (op == "absorb") {
                Bytes data = hex_decode(step.at("data_hex").get<std::string>());
                t.absorb(label, bytes_of(data));
            } else {
                REQUIRE(op == "challenge");
                size_t count = step.at("count").get<size_t>();
                auto elements = t.challenge_vector(label, count);
                auto expect = step.at("elements_hex");
                REQUIRE(elements.size() == expect.size());
                for (size_t i = 0; i < count; ++i) {
                    CHECK(hex_encode(fe_encode(elements[i])) ==
                          expect[i].get<std::string>());
                }
            }
            CHECK(state_hex(t) == step.at("state_hex").get<std::string>());
        }
        CHECK(state_hex(t) == c.at("final_state_hex").get<std::string>());
        ++cases;
    }
    CHECK(cases >= 8);
}

TEST_CASE("absorption order matters") {
    Transcript t1(profile());
    t1.absorb("a", std::string("x"));
    t1.absorb("b", std::string("y"));
    Transcript t2(profile());
    t2.absorb("b", std::string("y"));
    t2.absorb("a", std::string("x"));
    CHECK(t1.state() != t2.state());
}

TEST_CASE("absorbing empty data differs from not absorbing") {
    Transcript t1(profile());
    Transcript t2(profile());
    CHECK(t1.state() == t2.state());
    t1.absorb("profile", std::string());
    CHECK(t1.state() != t2.state());
}

TEST_CASE("length framing separates label/data boundaries") {
    Transcript t1(profile());
    t1.absorb("ab", std::string("c"));
    Transcript t2(profile());
    t2.absorb("a", std::string("bc"));
    CHECK(t1.state() != t2.state());
}

TEST_CASE("challenges are deterministic for equal states and labels") {
    Transcript t(profile());
    t.absorb("manifest", std::string("payload"));
    Transcript copy = t;
    auto v1 = t.challenge_vector("chal/c", 5);
    auto v2 = copy.challenge_vector("chal/c", 5);
    CHECK(v1 == v2);
    CHECK(t.state() == copy.state());
}

TEST_CASE("different labels give distinct challenges over 100 trials") {
    for (int trial = 0; trial < 100; ++trial) {
        Transcript t(profile());
        t.absorb("x-digest", std::string("trial-") + std::to_string(trial));
        Transcript copy = t;
        auto a = t.challenge_vector("chal/r", 3);
        auto b = copy.challenge_vector("chal/s", 3);
        CHECK_FALSE(a[0] == b[0]);  // no equal prefix
    }
}

TEST_CASE("challenge derivation chains the state") {
    Transcript t(profile());
    auto before = t.state();
    auto first = t.challenge_vector("chal/c", 1);
    CHECK(t.state() != before);
    auto second = t.challenge_vector("chal/c", 1);
    CHECK_FALSE(first[0] == second[0]);
}

TEST_CASE("label length limits enforced") {
    Transcript t(profile());
    CHECK_THROWS_AS(t.absorb("", std::string("x")), Error);
    std::string long_label(65, 'l');
    CHECK_THROWS_AS(t.absorb(long_label, std::string("x")), Error);
    std::string max_label(64, 'l');
    CHECK_NOTHROW(t.absorb(max_label, std::string("x")));
    CHECK_THROWS_AS(t.challenge_vector("", 1), Error);
    CHECK_THROWS_AS(t.challenge_vector(long_label, 1), Error);
    CHECK_THROWS_AS(t.challenge_vector("chal/c", 0), Error);
}

TEST_CASE("challenge elements are canonical field elements") {
    Transcript t(profile());
    t.absorb("delta-digest", std::string("d"));
    for (const auto& e : t.challenge_vector("chal/c", 64)) {
        CHECK(fe_is_canonical(fe_encode(e)));
    }
}
