#include <gtest/gtest.h>

#include <cmath>
#include <future>
#include <random>

#include "oracle_grasp/pipeline.hpp"

namespace og = oracle_grasp;

namespace {

og::RgbImage plain(int w, int h) { return og::RgbImage(h, w, CV_8UC3, cv::Scalar(200, 180, 160)); }

og::PipelineConfig defaults() { return og::PipelineConfig{}; }

bool inside(og::Point p, int w, int h) { return p.x >= 0 && p.y >= 0 && p.x <= w - 1 && p.y <= h - 1; }

// Replies with garbage whenever `bad(call)` holds, otherwise with the cell
// holding a fixed target.
class FlakyOracle : public og::Oracle {
public:
    FlakyOracle(og::Point target, std::function<bool(int)> bad) : target_(target), bad_(std::move(bad)) {}
    std::string respond(const og::OracleRequest& req) override {
        if (req.kind == og::RequestKind::kScp) return "a box";
        const int call = calls_++;
        if (bad_(call)) return "I cannot tell.";
        const og::Point local = req.frame.forward(target_);
        return og::format_grp_response(
            {og::cell_index_at(*req.grid, int(std::lround(local.x)), int(std::lround(local.y))), ""});
    }
    int calls() const { return calls_; }

private:
    og::Point target_;
    std::function<bool(int)> bad_;
    int calls_ = 0;
};

}  // namespace

TEST(Config, DefaultsAndValidation) {
    const auto c = defaults();
    EXPECT_EQ(c.iterations, 6);
    EXPECT_EQ(c.stop_window, 3);
    EXPECT_DOUBLE_EQ(c.iou_threshold, 0.4);
    EXPECT_DOUBLE_EQ(c.stop_factor, 0.3);
    EXPECT_EQ(c.effective_crop_iterations(), 3);
    EXPECT_NO_THROW(c.validate());

    auto bad = c;
    bad.stop_window = 6;
    EXPECT_THROW(bad.validate(), og::Error);
    bad = c;
    bad.stop_factor = 1.0;
    EXPECT_THROW(bad.validate(), og::Error);
    bad = c;
    bad.iou_threshold = 1.5;
    EXPECT_THROW(bad.validate(), og::Error);
    bad = c;
    bad.grid_schedule = {{3, 3}, {4, 4}, {3, 3}, {5, 5}, {6, 6}, {7, 7}};
    try {
        bad.validate();
        FAIL();
    } catch (const og::Error& e) {
        EXPECT_EQ(e.kind(), og::ErrorKind::kConfig);
    }
}

TEST(Config, JsonRoundTripAndDigest) {
    auto c = defaults();
    c.stop_factor = 0.25;
    c.grid_schedule = og::default_grid_schedule(8);
    c.use_explanation = false;
    c.overlay_style.color = {0, 255, 0};
    const auto back = og::config_from_json(og::config_to_json(c));
    EXPECT_EQ(og::config_to_json(back), og::config_to_json(c));
    EXPECT_EQ(og::config_digest(back), og::config_digest(c));
    EXPECT_NE(og::config_digest(c), og::config_digest(defaults()));
}

TEST(Config, PartialDocumentKeepsDefaults) {
    const auto c = og::config_from_json(nlohmann::json::parse(R"({"stop_factor": 0.2, "ablation": {"use_scp": false}})"));
    EXPECT_DOUBLE_EQ(c.stop_factor, 0.2);
    EXPECT_FALSE(c.use_scp);
    EXPECT_TRUE(c.use_explanation);
    EXPECT_EQ(c.iterations, 6);
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
    EXPECT_THROW(og::config_from_json(nlohmann::json::parse(R"({"iterationz": 3})")), og::Error);
    EXPECT_THROW(og::config_from_json(nlohmann::json::parse(R"({"ablation": {"use_xyz": true}})")), og::Error);
    EXPECT_THROW(og::config_from_json(nlohmann::json::parse(R"({"iterations": "six"})")), og::Error);
    EXPECT_THROW(og::config_from_json(nlohmann::json::parse(R"({"overlay": {"mode": "dots"}})")), og::Error);
}

TEST(GridSchedule, Examples) {
    EXPECT_EQ(og::default_grid_schedule(6),
              (std::vector<std::pair<int, int>>{{3, 3}, {4, 4}, {5, 5}, {6, 6}, {7, 7}, {8, 8}}));
    EXPECT_EQ(og::default_grid_schedule(1), (std::vector<std::pair<int, int>>{{3, 3}}));
    const auto eight = og::default_grid_schedule(8);
    EXPECT_EQ(eight[6], (std::pair{9, 9}));
    EXPECT_EQ(eight[7], (std::pair{3, 4}));
    const auto all = og::default_grid_schedule(49);
    const std::set<std::pair<int, int>> distinct(all.begin(), all.end());
    EXPECT_EQ(distinct.size(), 49u);
    EXPECT_THROW(og::default_grid_schedule(50), og::Error);
}

TEST(GridSchedule, DiagonalCellCountsIncrease) {
    const auto s = og::default_grid_schedule(7);
    for (size_t i = 1; i < s.size(); ++i) EXPECT_GT(s[i].first * s[i].second, s[i - 1].first * s[i - 1].second);
}

TEST(Augment, Examples) {
    const auto a = og::RectMask::make(0, 0, 10, 10);
    const auto b = og::RectMask::make(5, 0, 10, 10);
    EXPECT_EQ(og::augment_intersections(std::vector{a, b}, 0.4).added, 0);
    const auto dup = og::augment_intersections(std::vector{a, a}, 0.4);
    EXPECT_EQ(dup.added, 1);
    ASSERT_EQ(dup.masks.size(), 3u);
    EXPECT_EQ(dup.masks[2], a);
    const auto disjoint = og::augment_intersections(
        std::vector{a, og::RectMask::make(20, 0, 5, 5), og::RectMask::make(40, 40, 5, 5)}, 0.4);
    EXPECT_EQ(disjoint.added, 0);
    EXPECT_EQ(disjoint.masks.size(), 3u);
}

TEST(Augment, StrictThresholdAndOnePass) {
    const auto a = og::RectMask::make(0, 0, 10, 10);
    const auto b = og::RectMask::make(5, 0, 10, 10);  // IoU exactly 1/3
    EXPECT_EQ(og::augment_intersections(std::vector{a, b}, 1.0 / 3.0).added, 0);
    EXPECT_EQ(og::augment_intersections(std::vector{a, b}, 0.3).added, 1);
    // Three identical masks: C(3,2) pairs, appended copies never pair again.
    EXPECT_EQ(og::augment_intersections(std::vector{a, a, a}, 0.4).added, 3);
}

TEST(Augment, AddedMasksLieInTheirPairOverlap) {
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<int> pos(0, 20), size(5, 25);
    for (int t = 0; t < 100; ++t) {
        std::vector<og::RectMask> ms;
        for (int i = 0; i < 5; ++i) ms.push_back(og::RectMask::make(pos(rng), pos(rng), size(rng), size(rng)));
        const auto r = og::augment_intersections(ms, 0.2);
        EXPECT_GE(r.masks.size(), ms.size());
        EXPECT_EQ(r.masks.size(), ms.size() + r.added);
        for (size_t i = ms.size(); i < r.masks.size(); ++i) {
            bool found = false;
            for (size_t j = 0; j < ms.size() && !found; ++j)
                for (size_t k = j + 1; k < ms.size() && !found; ++k)
                    found = ms[j].contains(r.masks[i]) && ms[k].contains(r.masks[i]);
            EXPECT_TRUE(found);
        }
    }
}

TEST(EarlyStop, Examples) {
    EXPECT_TRUE(og::early_stop_check(std::vector<og::Point>{{5, 5}, {5, 5}, {5, 5}}, 0.01, 100));
    EXPECT_TRUE(og::early_stop_check(std::vector<og::Point>{{0, 0}, {280, 0}}, 0.3, 500));
    EXPECT_FALSE(og::early_stop_check(std::vector<og::Point>{{0, 0}, {300, 0}}, 0.3, 500));
    EXPECT_FALSE(og::early_stop_check(std::vector<og::Point>{{0, 0}, {299, 399}}, 0.3, 500));
    EXPECT_FALSE(og::early_stop_check(std::vector<og::Point>{{5, 5}}, 0.0, 100));
    EXPECT_THROW(og::early_stop_check(std::vector<og::Point>{}, 0.3, 100), og::Error);
}

TEST(EstimatePose, Examples) {
    og::CandidateSet one;
    one.candidates.push_back({.center = {50, 50}});
    const auto e1 = og::estimate_pose(one, 100, 100);
    EXPECT_EQ(e1.pose.p, (og::Point{50, 50}));
    EXPECT_EQ(e1.pose.theta_deg, 0.0);
    EXPECT_TRUE(e1.low_confidence);

    og::CandidateSet line;
    for (double t : {-30.0, -10.0, 0.0, 20.0, 45.0})
        line.candidates.push_back({.center = {60 + t * std::cos(M_PI / 6), 50 + t * std::sin(M_PI / 6)}});
    const auto e2 = og::estimate_pose(line, 200, 200);
    EXPECT_NEAR(og::angular_distance_mod180(e2.pose.theta_deg, 30.0), 0.0, 1e-6);
    EXPECT_FALSE(e2.low_confidence);

    og::CandidateSet square;
    for (og::Point p : {og::Point{10, 10}, og::Point{30, 10}, og::Point{10, 30}, og::Point{30, 30}})
        square.candidates.push_back({.center = p});
    const auto e3 = og::estimate_pose(square, 100, 100);
    EXPECT_EQ(e3.pose.theta_deg, 0.0);
    EXPECT_TRUE(e3.low_confidence);
    EXPECT_EQ(e3.pose.p, (og::Point{20, 20}));

    EXPECT_THROW(og::estimate_pose(og::CandidateSet{}, 10, 10), og::Error);
}

TEST(EstimatePose, RoundsHalfUpAndClamps) {
    og::CandidateSet s;
    s.candidates.push_back({.center = {10.5, 3.5}});
    s.candidates.push_back({.center = {10.5, 3.5}});
    EXPECT_EQ(og::estimate_pose(s, 100, 100).pose.p, (og::Point{11, 4}));
    og::CandidateSet edge;
    edge.candidates.push_back({.center = {99.6, 49.6}});
    EXPECT_EQ(og::estimate_pose(edge, 100, 50).pose.p, (og::Point{99, 49}));
}

TEST(CandidateLoop, ZeroNoiseEarlyStops) {
    const auto img = plain(300, 240);
    og::ScriptedOracle oracle({.targets = {{200, 60}}});
    const auto r = og::run_candidate_loop(img, oracle, defaults());
    EXPECT_TRUE(r.early_stopped);
    EXPECT_EQ(r.grp_queries_used, 6);
    EXPECT_EQ(r.grp_requests_sent, 6);
    EXPECT_FALSE(r.orientation_refined);
    ASSERT_TRUE(r.crop_window.has_value());
    EXPECT_EQ(static_cast<int>(r.candidate_set.candidates.size()), 6 + r.candidate_set.added);
    int crop = 0;
    for (const auto& c : r.candidate_set.candidates) {
        crop += c.stage == og::Stage::kCrop;
        EXPECT_TRUE(c.frame.inverse(c.mask.center()) == c.center);
        EXPECT_TRUE(og::RectMask::make(0, 0, c.frame.width(), c.frame.height()).contains(c.mask));
    }
    EXPECT_GE(crop, 3);
    EXPECT_EQ(r.transcript.entries.size(), 6u);
}

TEST(CandidateLoop, ForcedFullBudgetWithZeroRho) {
    auto config = defaults();
    config.stop_factor = 0.0;
    config.use_orientation_refinement = false;
    og::ScriptedOracle oracle({.mode = og::ScriptedMode::kRandomCell, .seed = 4});
    const auto r = og::run_candidate_loop(plain(200, 200), oracle, config);
    EXPECT_FALSE(r.early_stopped);
    EXPECT_EQ(r.grp_queries_used, 6);
    EXPECT_FALSE(r.crop_window.has_value());
}

TEST(CandidateLoop, QueryBudgetInvariant) {
    const auto img = plain(200, 160);
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto config = defaults();
        config.stop_factor = 0.05 + 0.02 * static_cast<double>(seed % 10);
        og::ScriptedOracle oracle({.mode = og::ScriptedMode::kRandomCell, .seed = seed});
        const auto r = og::run_candidate_loop(img, oracle, config);
        const int q = r.grp_queries_used;
        const int K = config.iterations, m = config.stop_window;
        EXPECT_TRUE((q >= 2 * m && q <= K) || q == K + m) << q;
        EXPECT_EQ(q == K + m, r.orientation_refined);
        if (r.early_stopped) EXPECT_EQ(q, 2 * m);
        for (const auto& c : r.candidate_set.candidates) EXPECT_TRUE(inside(c.center, 200, 160));
        EXPECT_TRUE(inside(r.pose.p, 200, 160));
        EXPECT_GE(r.pose.theta_deg, 0.0);
        EXPECT_LT(r.pose.theta_deg, 180.0);
    }
}

TEST(CandidateLoop, CropStageFailureContinuesOnFullImage) {
    // Stage A agrees on one spot, crop-stage replies scatter wildly.
    class Split : public og::Oracle {
    public:
        std::string respond(const og::OracleRequest& req) override {
            const auto& g = *req.grid;
            if (req.frame.is_identity()) return og::format_grp_response({og::cell_index_at(g, 100, 100), ""});
            const int cell = (n_++ % 2 == 0) ? 0 : g.cell_count() - 1;
            return og::format_grp_response({cell, ""});
        }
        int n_ = 0;
    } oracle;
    auto config = defaults();
    config.use_orientation_refinement = false;
    config.stop_factor = 0.2;
    config.crop_margin_frac = 3.0;  // crop spans the whole image
    const auto r = og::run_candidate_loop(plain(200, 200), oracle, config);
    EXPECT_FALSE(r.early_stopped);
    EXPECT_EQ(r.grp_queries_used, 6);
    EXPECT_TRUE(r.crop_window.has_value());
    EXPECT_NE(std::find(r.notes.begin(), r.notes.end(),
                        "crop-stage centers failed the stopping test; continuing on the full image"),
              r.notes.end());
}

TEST(CandidateLoop, ExtraBudgetAfterFailedCrop) {
    class Split : public og::Oracle {
    public:
        std::string respond(const og::OracleRequest& req) override {
            const auto& g = *req.grid;
            if (req.frame.is_identity()) return og::format_grp_response({og::cell_index_at(g, 100, 100), ""});
            return og::format_grp_response({(n_++ % 2 == 0) ? 0 : g.cell_count() - 1, ""});
        }
        int n_ = 0;
    } oracle;
    auto config = defaults();
    config.iterations = 9;
    config.use_orientation_refinement = false;
    config.stop_factor = 0.2;
    config.crop_margin_frac = 3.0;
    const auto r = og::run_candidate_loop(plain(200, 200), oracle, config);
    EXPECT_EQ(r.grp_queries_used, 9);
    int full = 0;
    for (const auto& c : r.candidate_set.candidates) full += c.stage == og::Stage::kFull && !c.augmented;
    EXPECT_EQ(full, 6);
}

TEST(CandidateLoop, CropIterationsConfigurable) {
    auto config = defaults();
    config.iterations = 10;
    config.crop_iterations = 2;
    og::ScriptedOracle oracle({.targets = {{50, 50}}});
    const auto r = og::run_candidate_loop(plain(200, 200), oracle, config);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_EQ(r.grp_queries_used, 5);
}

TEST(CandidateLoop, ContinuousEarlyStop) {
    // First three replies scatter, then the oracle settles.
    class Settling : public og::Oracle {
    public:
        std::string respond(const og::OracleRequest& req) override {
            const auto& g = *req.grid;
            const int n = n_++;
            if (n < 2) return og::format_grp_response({n == 0 ? 0 : g.cell_count() - 1, ""});
            const og::Point t = req.frame.forward({60, 60});
            return og::format_grp_response({og::cell_index_at(g, int(t.x), int(t.y)), ""});
        }
        int n_ = 0;
    };
    auto config = defaults();
    config.iterations = 12;
    Settling once;
    EXPECT_FALSE(og::run_candidate_loop(plain(300, 300), once, config).early_stopped);
    config.continuous_early_stop = true;
    Settling cont;
    const auto r = og::run_candidate_loop(plain(300, 300), cont, config);
    EXPECT_TRUE(r.early_stopped);
    EXPECT_EQ(r.grp_queries_used, 5 + 3);
}

TEST(CandidateLoop, OrientationRefinementFiresOnDiagonalLine) {
    og::ScriptedOracle oracle({.targets = {{20, 20}, {279, 279}, {150, 150}}});
    const auto r = og::run_candidate_loop(plain(300, 300), oracle, defaults());
    EXPECT_FALSE(r.early_stopped);
    EXPECT_TRUE(r.orientation_refined);
    EXPECT_EQ(r.grp_queries_used, 9);
    int rotated = 0;
    for (const auto& c : r.candidate_set.candidates) {
        if (c.stage != og::Stage::kRotated) continue;
        ++rotated;
        EXPECT_FALSE(c.augmented);
        EXPECT_TRUE(c.frame.rotated());
        // Mapped back near the 45 degree line through the targets.
        EXPECT_LT(std::abs(c.center.y - c.center.x) / std::sqrt(2.0), 0.5 * c.mask.height + 1.0);
    }
    EXPECT_EQ(rotated, 3);
    EXPECT_NEAR(og::angular_distance_mod180(r.pose.theta_deg, 45.0), 0.0, 5.0);
}

TEST(CandidateLoop, OrientationRefinementGates) {
    auto config = defaults();
    {
        og::ScriptedOracle shallow({.targets = {{10, 140}, {289, 160}, {150, 150}}});
        const auto r = og::run_candidate_loop(plain(300, 300), shallow, config);
        EXPECT_FALSE(r.orientation_refined);
        EXPECT_EQ(r.grp_queries_used, 6);
    }
    {
        og::ScriptedOracle spread({.targets = {{10, 10}, {289, 289}, {10, 289}, {289, 10}}});
        config.anisotropy_min = 50.0;
        const auto r = og::run_candidate_loop(plain(300, 300), spread, config);
        EXPECT_FALSE(r.orientation_refined);
    }
    {
        og::ScriptedOracle diag({.targets = {{20, 20}, {279, 279}, {150, 150}}});
        config = defaults();
        config.use_orientation_refinement = false;
        const auto r = og::run_candidate_loop(plain(300, 300), diag, config);
        EXPECT_FALSE(r.orientation_refined);
        EXPECT_EQ(r.grp_queries_used, 6);
    }
}

TEST(CandidateLoop, RetriesThenSucceeds) {
    FlakyOracle oracle({100, 100}, [](int call) { return call % 2 == 0; });
    const auto r = og::run_candidate_loop(plain(200, 200), oracle, defaults());
    EXPECT_EQ(r.grp_queries_used, 6);
    EXPECT_EQ(r.grp_requests_sent, 12);
    EXPECT_EQ(r.discarded_iterations, 0);
    EXPECT_EQ(r.transcript.entries.size(), 12u);
}

TEST(CandidateLoop, DiscardedIterationConsumesBudget) {
    // Calls 3..5 are the three attempts of the second iteration.
    FlakyOracle oracle({100, 100}, [](int call) { return call >= 1 && call <= 3; });
    auto config = defaults();
    const auto r = og::run_candidate_loop(plain(200, 200), oracle, config);
    EXPECT_EQ(r.discarded_iterations, 1);
    EXPECT_EQ(r.grp_requests_sent, r.grp_queries_used + 2);
    EXPECT_LE(r.grp_queries_used, config.iterations + config.stop_window);
}

TEST(CandidateLoop, AllUnparseableFails) {
    FlakyOracle oracle({100, 100}, [](int) { return true; });
    try {
        og::run_candidate_loop(plain(200, 200), oracle, defaults());
        FAIL();
    } catch (const og::PredictionError& e) {
        EXPECT_STREQ(e.what(), "no candidates");
        EXPECT_EQ(e.partial_transcript().entries.size(), 18u);
    }
}

TEST(CandidateLoop, TransportErrorCarriesPartialTranscript) {
    class Dies : public og::Oracle {
    public:
        std::string respond(const og::OracleRequest& req) override {
            if (n_++ == 2) throw og::OracleError(og::OracleFailure::kTransport, "connection refused");
            return og::format_grp_response({og::cell_index_at(*req.grid, 5, 5), ""});
        }
        int n_ = 0;
    } oracle;
    try {
        og::run_candidate_loop(plain(200, 200), oracle, defaults());
        FAIL();
    } catch (const og::PredictionError& e) {
        EXPECT_EQ(e.kind(), og::ErrorKind::kOracle);
        EXPECT_STREQ(e.what(), "connection refused");
        ASSERT_EQ(e.partial_transcript().entries.size(), 3u);
        EXPECT_EQ(e.partial_transcript().entries[2].error, "connection refused");
    }
}

TEST(CandidateLoop, ScalingImageScalesPose) {
    og::ScriptedOracle small({.targets = {{37, 101}}});
    og::ScriptedOracle large({.targets = {{74, 202}}});
    auto config = defaults();
    config.grid_schedule = {{3, 3}, {4, 4}, {5, 5}, {6, 6}, {8, 8}, {9, 9}, {10, 10}, {12, 12}, {15, 15}};
    config.crop_margin_frac = 0.0;
    const auto a = og::run_candidate_loop(plain(360, 360), small, config);
    const auto b = og::run_candidate_loop(plain(720, 720), large, config);
    EXPECT_EQ(a.early_stopped, b.early_stopped);
    EXPECT_LE(std::abs(b.pose.p.x - 2 * a.pose.p.x), 1.0);
    EXPECT_LE(std::abs(b.pose.p.y - 2 * a.pose.p.y), 1.0);
}

TEST(CandidateLoop, ConcurrentPredictionsShareOracle) {
    og::ScriptedOracle oracle({.targets = {{120, 40}}});
    const auto img = plain(240, 180);
    const auto reference = og::run_candidate_loop(img, oracle, defaults());
    std::vector<std::future<og::GraspResult>> runs;
    for (int i = 0; i < 4; ++i)
        runs.push_back(std::async(std::launch::async, [&] { return og::run_candidate_loop(img, oracle, defaults()); }));
    for (auto& f : runs) {
        const auto r = f.get();
        EXPECT_EQ(r.pose.p, reference.pose.p);
        EXPECT_EQ(og::transcript_digest(r.transcript), og::transcript_digest(reference.transcript));
    }
}

TEST(CandidateLoop, OverlayNoneSendsRawImage) {
    auto config = defaults();
    config.overlay = og::OverlayMode::kNone;
    og::ScriptedOracle oracle({.targets = {{50, 50}}});
    const auto img = plain(200, 200);
    const auto r = og::run_candidate_loop(img, oracle, config);
    for (size_t i = 1; i < 3; ++i) EXPECT_EQ(r.transcript.entries[i].image_digest, r.transcript.entries[0].image_digest);
}

TEST(Predict, ScpAblationAndContext) {
    og::ScriptedOracle oracle({.scene_text = "a red mug", .targets = {{50, 50}}});
    const auto with = og::predict_grasp(plain(200, 200), nullptr, oracle, defaults());
    ASSERT_TRUE(with.scene_context.has_value());
    EXPECT_EQ(*with.scene_context, "a red mug");
    EXPECT_EQ(with.transcript.entries.front().kind, og::RequestKind::kScp);
    EXPECT_NE(with.transcript.entries[1].prompt.find("a red mug"), std::string::npos);

    auto config = defaults();
    config.use_scp = false;
    og::ScriptedOracle o2({.targets = {{50, 50}}});
    const auto without = og::predict_grasp(plain(200, 200), nullptr, o2, config);
    EXPECT_FALSE(without.scene_context.has_value());
    for (const auto& e : without.transcript.entries) EXPECT_EQ(e.kind, og::RequestKind::kGrp);
    EXPECT_EQ(without.pose.p, with.pose.p);
}

TEST(Predict, NoDepthMatchesLoop) {
    og::ScriptedOracle a({.targets = {{70, 20}}}), b({.targets = {{70, 20}}});
    auto config = defaults();
    config.use_scp = false;
    const auto p = og::predict_grasp(plain(200, 100), nullptr, a, config);
    const auto l = og::run_candidate_loop(plain(200, 100), b, config);
    EXPECT_EQ(p.pose.p, l.pose.p);
    EXPECT_EQ(p.pose.theta_deg, l.pose.theta_deg);
    EXPECT_FALSE(p.depth.has_value());
}

TEST(Predict, ConstantDepthStaysInClearanceDisc) {
    auto config = defaults();
    config.focal_length_px = 500;
    config.clearance_radius_m = 0.04;
    og::ScriptedOracle oracle({.targets = {{80, 60}}});
    const auto depth = og::DepthMap::constant(200, 150, 800);
    const auto r = og::predict_grasp(plain(200, 150), &depth, oracle, config);
    ASSERT_TRUE(r.depth.has_value());
    EXPECT_TRUE(r.depth->refined);
    EXPECT_DOUBLE_EQ(r.depth->clearance_px, 500 * 0.04 / 0.8);
    EXPECT_LE(og::distance(r.pose.p, r.depth->unrefined.p), r.depth->clearance_px);
    EXPECT_EQ(r.pose.theta_deg, r.depth->unrefined.theta_deg);
    EXPECT_EQ(r.depth->refined_depth_mm, 800.0);
}

TEST(Predict, DepthRefinementMovesOffHole) {
    auto config = defaults();
    config.focal_length_px = 500;
    config.clearance_radius_m = 0.04;
    // Near surface everywhere except a far patch around the target.
    auto depth = og::DepthMap::constant(200, 200, 600);
    for (int y = 80; y < 120; ++y)
        for (int x = 80; x < 120; ++x) depth.set(x, y, 1500);
    og::ScriptedOracle oracle({.targets = {{100, 100}}});
    const auto r = og::predict_grasp(plain(200, 200), &depth, oracle, config);
    ASSERT_TRUE(r.depth.has_value());
    EXPECT_EQ(r.depth->reference_depth_mm, 1500.0);
    EXPECT_EQ(r.depth->refined_depth_mm, 600.0);
    EXPECT_NE(r.pose.p, r.depth->unrefined.p);
}

TEST(Predict, DepthAblationAndErrors) {
    auto config = defaults();
    const auto depth = og::DepthMap::constant(200, 200, 800);
    og::ScriptedOracle oracle({.targets = {{50, 50}}});
    try {
        og::predict_grasp(plain(200, 200), &depth, oracle, config);
        FAIL();
    } catch (const og::Error& e) {
        EXPECT_EQ(e.kind(), og::ErrorKind::kConfig);
    }
    config.use_depth_refinement = false;
    EXPECT_FALSE(og::predict_grasp(plain(200, 200), &depth, oracle, config).depth.has_value());
    config.use_depth_refinement = true;
    config.focal_length_px = 500;
    config.clearance_radius_m = 0.04;
    const auto small = og::DepthMap::constant(100, 100, 800);
    EXPECT_THROW(og::predict_grasp(plain(200, 200), &small, oracle, config), og::Error);
}

TEST(ResultJson, DeterministicAndTimingFree) {
    og::ScriptedOracle a({.targets = {{33, 44}}}), b({.targets = {{33, 44}}});
    const auto r1 = og::predict_grasp(plain(160, 120), nullptr, a, defaults());
    auto r2 = og::predict_grasp(plain(160, 120), nullptr, b, defaults());
    for (auto& e : r2.transcript.entries) {
        e.latency_ms += 1234.5;
        e.timestamp = "1999-01-01T00:00:00.000Z";
    }
    EXPECT_EQ(og::result_to_json(r1, defaults()).dump(), og::result_to_json(r2, defaults()).dump());
    const auto doc = og::result_to_json(r1, defaults());
    EXPECT_EQ(doc["grp_queries_used"], 6);
    EXPECT_EQ(doc["config_digest"], og::config_digest(defaults()));
    EXPECT_TRUE(doc["depth_refinement"].is_null());
    EXPECT_EQ(doc.dump().find("latency"), std::string::npos);
}
