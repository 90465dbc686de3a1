#include <gtest/gtest.h>

#include <cstdlib>
#include <nlohmann/json.hpp>

#include "oracle_grasp/io.hpp"
#include "oracle_grasp/oracle.hpp"
#include "stub_server.hpp"

namespace og = oracle_grasp;
namespace ogt = oracle_grasp::testing;

namespace {

og::RgbImage solid(int w, int h) { return og::RgbImage(h, w, CV_8UC3, cv::Scalar(10, 20, 30)); }

og::GridSpec grid3(int w = 90, int h = 90) { return og::GridSpec::make(3, 3, w, h); }

og::GraspRegionChoice ask(og::Oracle& oracle, const og::GridSpec& grid, og::OracleTranscript& tr,
                          const og::FrameTransform& frame = {}) {
    const auto ctx = og::SceneContext::make("a mug");
    return og::query_grasp_region(oracle, solid(grid.image_width, grid.image_height), grid, &ctx, true,
                                  frame.root_width() ? frame : og::FrameTransform(grid.image_width, grid.image_height),
                                  tr);
}

}  // namespace

TEST(Prompts, ScpText) {
    const std::string scp = og::build_scp();
    EXPECT_EQ(scp.rfind("Please provide a short, concise description of the principal object present in the image", 0), 0u);
    EXPECT_NE(scp.find("Keep your answer to one sentence."), std::string::npos);
    EXPECT_EQ(scp, og::build_scp());
}

TEST(Prompts, GrpSubstitutesContextAndGrid) {
    const auto ctx = og::SceneContext::make("a mug with a handle");
    const std::string grp = og::build_grp(&ctx, grid3(), true);
    EXPECT_NE(grp.find("Based on the following image context: a mug with a handle"), std::string::npos);
    EXPECT_NE(grp.find("from (0,0) to (3, 2)"), std::string::npos);
    EXPECT_NE(grp.find("GRID_CELL: <cell_number>"), std::string::npos);
    EXPECT_NE(grp.find("EXPLANATION"), std::string::npos);
    EXPECT_EQ(grp, og::build_grp(&ctx, grid3(), true));
    EXPECT_NE(og::build_grp(&ctx, og::GridSpec::make(5, 7, 90, 90), true).find("from (0,0) to (5, 6)"),
              std::string::npos);
}

TEST(Prompts, ExplanationAblation) {
    const auto ctx = og::SceneContext::make("a mug");
    EXPECT_EQ(og::build_grp(&ctx, grid3(), false).find("EXPLANATION"), std::string::npos);
}

TEST(Prompts, ContextAblationDropsClause) {
    const std::string grp = og::build_grp(nullptr, grid3(), true);
    EXPECT_EQ(grp.find("image context"), std::string::npos);
    EXPECT_EQ(grp.rfind("Analyze the provided image", 0), 0u);
}

TEST(SceneContext, TrimsAndRejectsBlank) {
    EXPECT_EQ(og::SceneContext::make("  a red mug \n").text, "a red mug");
    try {
        og::SceneContext::make(" \n\t");
        FAIL();
    } catch (const og::OracleError& e) {
        EXPECT_EQ(e.failure(), og::OracleFailure::kEmptyContext);
        EXPECT_STREQ(e.what(), "empty context");
    }
}

TEST(ParseGrp, Examples) {
    const auto c = og::parse_grp_response("GRID_CELL: 7\nEXPLANATION: near the handle", grid3());
    EXPECT_EQ(c.cell_index, 7);
    EXPECT_EQ(c.explanation, "near the handle");
    EXPECT_EQ(og::parse_grp_response("GRID_CELL: (2,1)", og::GridSpec::make(4, 3, 80, 60)).cell_index, 6);
    try {
        og::parse_grp_response("I think the best area is the top.", grid3());
        FAIL();
    } catch (const og::OracleError& e) {
        EXPECT_STREQ(e.what(), "unparseable response");
        EXPECT_TRUE(e.retryable());
    }
}

TEST(ParseGrp, OutOfRange) {
    for (const char* raw : {"GRID_CELL: 9", "GRID_CELL: (3,0)", "GRID_CELL: -1"}) {
        try {
            og::parse_grp_response(raw, grid3());
            FAIL() << raw;
        } catch (const og::OracleError& e) {
            EXPECT_STREQ(e.what(), "cell out of range");
            EXPECT_EQ(e.failure(), og::OracleFailure::kOutOfRange);
        }
    }
}

TEST(ParseGrp, ToleratesFormattingDrift) {
    EXPECT_EQ(og::parse_grp_response("```\nGRID_CELL: 4\nEXPLANATION: middle\n```", grid3()).cell_index, 4);
    EXPECT_EQ(og::parse_grp_response("Sure! **GRID_CELL:** 5", grid3()).cell_index, 5);
    EXPECT_EQ(og::parse_grp_response("grid_cell: [1, 2]", grid3()).cell_index, 7);
}

TEST(ParseGrp, RoundTripsCanonicalFormat) {
    const auto grid = og::GridSpec::make(6, 5, 120, 100);
    for (int i = 0; i < grid.cell_count(); ++i) {
        const og::GraspRegionChoice c{i, "because " + std::to_string(i)};
        EXPECT_EQ(og::parse_grp_response(og::format_grp_response(c), grid), c);
        EXPECT_EQ(og::parse_grp_response(og::format_grp_response(c, false), grid).cell_index, i);
    }
}

TEST(ScriptedOracle, SceneTextAndCells) {
    og::ScriptedOracle oracle({.scene_text = "a red mug", .targets = {{45, 45}}});
    og::OracleTranscript tr;
    EXPECT_EQ(og::query_scene_context(oracle, solid(90, 90), tr).text, "a red mug");
    EXPECT_EQ(ask(oracle, grid3(), tr).cell_index, 4);
    og::ScriptedOracle corner({.targets = {{0, 0}}});
    for (int u = 3; u <= 9; ++u) EXPECT_EQ(ask(corner, og::GridSpec::make(u, 12 - u, 90, 90), tr).cell_index, 0);
    EXPECT_EQ(tr.entries.size(), 1u + 1u + 7u);
    EXPECT_EQ(tr.entries[0].kind, og::RequestKind::kScp);
    EXPECT_EQ(tr.entries[1].kind, og::RequestKind::kGrp);
    EXPECT_EQ(tr.entries[1].grid, grid3());
}

TEST(ScriptedOracle, ZeroNoiseCellContainsTarget) {
    og::ScriptedOracle oracle({.targets = {{17, 63}, {88, 2}, {50, 50}}});
    og::OracleTranscript tr;
    for (int i = 0; i < 30; ++i) {
        const auto grid = og::GridSpec::make(3 + i % 7, 3 + (i * 3) % 7, 90, 90);
        const og::Point target = std::vector<og::Point>{{17, 63}, {88, 2}, {50, 50}}[i % 3];
        EXPECT_TRUE(og::cell_mask(grid, ask(oracle, grid, tr).cell_index).contains(int(target.x), int(target.y)));
    }
}

TEST(ScriptedOracle, MapsTargetIntoDerivedFrame) {
    og::ScriptedOracle oracle({.targets = {{150, 120}}});
    og::OracleTranscript tr;
    const og::FrameTransform crop = og::FrameTransform(300, 300).then(og::CropStep{100, 100, 90, 90});
    const auto c = ask(oracle, grid3(), tr, crop);
    EXPECT_EQ(c.cell_index, 3 * 0 + 1);  // (50,20) in the crop
}

TEST(ScriptedOracle, NoiseStaysWithinRadiusAndIsSeeded) {
    auto run = [](std::uint64_t seed) {
        og::ScriptedOracle oracle({.mode = og::ScriptedMode::kNoisyTarget, .targets = {{45, 45}}, .noise_radius_px = 4, .seed = seed});
        og::OracleTranscript tr;
        std::vector<int> cells;
        const auto fine = og::GridSpec::make(90, 90, 90, 90);
        for (int i = 0; i < 50; ++i) cells.push_back(ask(oracle, fine, tr).cell_index);
        return cells;
    };
    const auto a = run(7);
    EXPECT_EQ(a, run(7));
    EXPECT_NE(a, run(8));
    for (int cell : a) {
        const int x = cell % 90, y = cell / 90;
        EXPECT_LE(std::hypot(x - 45.0, y - 45.0), 4.0 + 1.0);
    }
}

TEST(ScriptedOracle, RandomCellCoversGrid) {
    og::ScriptedOracle oracle({.mode = og::ScriptedMode::kRandomCell, .seed = 1});
    og::OracleTranscript tr;
    std::set<int> seen;
    for (int i = 0; i < 200; ++i) seen.insert(ask(oracle, grid3(), tr).cell_index);
    EXPECT_EQ(seen.size(), 9u);
}

TEST(ScriptedOracle, RequiresTargets) {
    EXPECT_THROW(og::ScriptedOracle({}), og::Error);
    EXPECT_THROW(og::ScriptedOracle({.targets = {{1, 1}}, .noise_radius_px = -1}), og::Error);
}

TEST(ReplayOracle, ReplaysVerbatimThenExhausts) {
    og::ScriptedOracle live({.scene_text = "a red mug", .targets = {{10, 80}}});
    og::OracleTranscript rec;
    og::query_scene_context(live, solid(90, 90), rec);
    const auto first = ask(live, grid3(), rec);

    og::ReplayOracle replay(rec);
    og::OracleTranscript tr;
    EXPECT_EQ(og::query_scene_context(replay, solid(90, 90), tr).text, "a red mug");
    EXPECT_EQ(ask(replay, grid3(), tr), first);
    EXPECT_EQ(replay.remaining(), 0u);
    try {
        ask(replay, grid3(), tr);
        FAIL();
    } catch (const og::OracleError& e) {
        EXPECT_EQ(e.failure(), og::OracleFailure::kExhausted);
        EXPECT_STREQ(e.what(), "transcript exhausted");
    }
    EXPECT_EQ(tr.entries.size(), 3u);
    EXPECT_EQ(tr.entries.back().error, "transcript exhausted");
}

TEST(ReplayOracle, DetectsDivergence) {
    og::ScriptedOracle live({.targets = {{10, 80}}});
    og::OracleTranscript rec;
    ask(live, grid3(), rec);
    og::ReplayOracle replay(rec);
    og::OracleTranscript tr;
    try {
        ask(replay, og::GridSpec::make(4, 4, 90, 90), tr);
        FAIL();
    } catch (const og::OracleError& e) {
        EXPECT_EQ(e.failure(), og::OracleFailure::kDivergence);
    }
}

TEST(ReplayOracle, ReraisesRecordedFailureClass) {
    og::OracleTranscript rec;
    og::TranscriptEntry e;
    e.kind = og::RequestKind::kGrp;
    e.grid = grid3();
    e.prompt = og::build_grp(nullptr, grid3(), true);
    e.error = "malformed chat completion: no message";
    e.failure = og::OracleFailure::kUnparseable;
    rec.entries.push_back(e);
    og::ReplayOracle replay(rec);
    og::OracleTranscript tr;
    try {
        og::query_grasp_region(replay, solid(90, 90), grid3(), nullptr, true, og::FrameTransform(90, 90), tr);
        FAIL();
    } catch (const og::OracleError& err) {
        EXPECT_TRUE(err.retryable());
    }
}

TEST(Query, FailedParseStillAppendsEntry) {
    struct Garbled : og::Oracle {
        std::string respond(const og::OracleRequest&) override { return "no idea"; }
    } garbled;
    og::OracleTranscript tr;
    EXPECT_THROW(ask(garbled, grid3(), tr), og::OracleError);
    ASSERT_EQ(tr.entries.size(), 1u);
    EXPECT_EQ(tr.entries[0].response, "no idea");
    EXPECT_EQ(tr.entries[0].error, "unparseable response");
    ASSERT_TRUE(tr.entries[0].image_png);
    EXPECT_EQ(tr.entries[0].image_digest, og::image_digest(*tr.entries[0].image_png));
}

TEST(Query, GridMustMatchImage) {
    og::ScriptedOracle oracle({.targets = {{1, 1}}});
    og::OracleTranscript tr;
    EXPECT_THROW(og::query_grasp_region(oracle, solid(50, 50), grid3(), nullptr, true, og::FrameTransform(50, 50), tr),
                 og::Error);
}

TEST(HttpConfig, EnvironmentRequired) {
    ::unsetenv("ORACLE_GRASP_ENDPOINT");
    try {
        og::http_config_from_env();
        FAIL();
    } catch (const og::Error& e) {
        EXPECT_EQ(e.kind(), og::ErrorKind::kConfig);
        EXPECT_STREQ(e.what(), "endpoint not configured");
    }
    ::setenv("ORACLE_GRASP_ENDPOINT", "http://example.invalid/v1/chat/completions", 1);
    ::setenv("ORACLE_GRASP_MODEL", "m", 1);
    const auto cfg = og::http_config_from_env();
    EXPECT_EQ(cfg.endpoint, "http://example.invalid/v1/chat/completions");
    EXPECT_EQ(cfg.model, "m");
    EXPECT_DOUBLE_EQ(cfg.temperature, 0.6);
    ::unsetenv("ORACLE_GRASP_ENDPOINT");
    ::unsetenv("ORACLE_GRASP_MODEL");
}

TEST(HttpOracle, RequestBodyWireFormat) {
    og::HttpOracle oracle({.endpoint = "http://127.0.0.1:9/v1/chat/completions", .model = "vlm", .temperature = 0.25});
    const std::vector<std::uint8_t> png{1, 2, 3, 4};
    og::OracleRequest req;
    req.prompt = "hello";
    req.png = &png;
    const auto body = nlohmann::json::parse(oracle.request_body(req));
    EXPECT_EQ(body["model"], "vlm");
    EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.25);
    const auto& msg = body["messages"][0];
    EXPECT_EQ(msg["role"], "user");
    EXPECT_EQ(msg["content"][0]["type"], "text");
    EXPECT_EQ(msg["content"][0]["text"], "hello");
    EXPECT_EQ(msg["content"][1]["image_url"]["url"], "data:image/png;base64,AQIDBA==");
}

TEST(HttpOracle, ParseChatCompletion) {
    EXPECT_EQ(og::parse_chat_completion(R"({"choices":[{"message":{"content":"hi"}}]})"), "hi");
    EXPECT_EQ(og::parse_chat_completion(R"({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]}}]})"),
              "ab");
    EXPECT_THROW(og::parse_chat_completion("not json"), og::OracleError);
    EXPECT_THROW(og::parse_chat_completion(R"({"choices":[]})"), og::OracleError);
}

TEST(HttpOracle, StubRoundTrip) {
    ogt::StubChatServer stub([](size_t, const std::string& prompt) {
        return prompt.find("GRID_CELL") == std::string::npos ? std::string("  a kettle with a handle  ")
                                                             : std::string("GRID_CELL: (1,2)\nEXPLANATION: handle");
    });
    og::HttpOracle oracle({.endpoint = stub.endpoint(), .api_key = "secret"});
    og::OracleTranscript tr;
    EXPECT_EQ(og::query_scene_context(oracle, solid(90, 90), tr).text, "a kettle with a handle");
    EXPECT_EQ(ask(oracle, grid3(), tr).cell_index, 7);
    const auto ex = stub.exchanges();
    ASSERT_EQ(ex.size(), 2u);
    EXPECT_EQ(ex[0].authorization, "Bearer secret");
    EXPECT_EQ(ex[0].prompt, og::build_scp());
    const std::string prefix = "data:image/png;base64,";
    ASSERT_EQ(ex[1].image_url.rfind(prefix, 0), 0u);
    EXPECT_EQ(og::image_digest(og::base64_decode(ex[1].image_url.substr(prefix.size()))), tr.entries[1].image_digest);
}

TEST(HttpOracle, ErrorsAreClassified) {
    ogt::StubChatServer stub([](size_t, const std::string&) { return std::string(); },
                             [](size_t call, const std::string&) -> std::optional<std::pair<int, std::string>> {
                                 if (call == 0) return std::pair{500, std::string("boom")};
                                 return std::pair{200, std::string("{\"unexpected\": true}")};
                             });
    og::HttpOracle oracle({.endpoint = stub.endpoint()});
    og::OracleTranscript tr;
    try {
        ask(oracle, grid3(), tr);
        FAIL();
    } catch (const og::OracleError& e) {
        EXPECT_EQ(e.failure(), og::OracleFailure::kTransport);
    }
    try {
        ask(oracle, grid3(), tr);
        FAIL();
    } catch (const og::OracleError& e) {
        EXPECT_EQ(e.failure(), og::OracleFailure::kUnparseable);
    }
    ASSERT_EQ(tr.entries.size(), 2u);
    EXPECT_EQ(tr.entries[1].failure, og::OracleFailure::kUnparseable);
}

TEST(HttpOracle, UnreachableEndpointIsTransportFailure) {
    og::HttpOracle oracle({.endpoint = "http://127.0.0.1:1/v1/chat/completions", .timeout_s = 2});
    og::OracleTranscript tr;
    try {
        ask(oracle, grid3(), tr);
        FAIL();
    } catch (const og::OracleError& e) {
        EXPECT_EQ(e.failure(), og::OracleFailure::kTransport);
        EXPECT_FALSE(e.retryable());
    }
}
