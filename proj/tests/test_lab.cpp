#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "flowpresheaf/lab.hpp"

using namespace flowpresheaf;

namespace {

json base() {
    return json::parse(R"({
        "schema": "flowpresheaf.scenario/1",
        "seed": 3,
        "patch": {"bounds": [[-10, 10]]},
        "fields": {"lin": ["x"], "family": {"components": ["p1*x"], "params": 1}},
        "grids": {"unit": {"box": [[0, 1]], "counts": 5}},
        "experiments": []
    })");
}

std::string config_path(const json& doc) {
    try {
        parse_scenario(doc);
    } catch (const ConfigError& e) {
        return e.path;
    }
    return "<none>";
}

std::vector<std::vector<std::string>> split_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.push_back("");
        rows.push_back(cells);
    }
    return rows;
}

}  // namespace

TEST_CASE("scenario validation reports json paths") {
    CHECK_NOTHROW(parse_scenario(base()));

    json d = base();
    d.erase("schema");
    CHECK(config_path(d) == "schema");
    d = base();
    d["schema"] = "flowpresheaf.scenario/0";
    CHECK(config_path(d) == "schema");
    d = base();
    d["fields"]["bad"] = json::array({"x +"});
    CHECK(config_path(d) == "fields.bad");
    d = base();
    d["fields"]["wide"] = json::array({"x", "x"});
    CHECK(config_path(d) == "fields.wide");
    d = base();
    d["grids"]["unit"]["counts"] = 0;
    CHECK(config_path(d) == "grids.unit.counts");
    d = base();
    d["experiments"] = json::parse(R"([{"kind": "flow", "field": "lin", "points": [0.5]},
                                       {"kind": "flow", "field": "missing", "points": [0.5]}])");
    CHECK(config_path(d) == "experiments[1].field");
    d = base();
    d["experiments"] = json::parse(R"([{"kind": "dil", "field": "lin", "points": [[0.5, 1]]}])");
    CHECK(config_path(d) == "experiments[0].points[0]");
    d = base();
    d["experiments"] = json::parse(R"([{"kind": "seminorm", "field": "lin", "class": {"type": "finite"}, "K": "nope"}])");
    CHECK(config_path(d) == "experiments[0].K");
    d = base();
    d["experiments"] = json::parse(R"([{"kind": "warp"}])");
    CHECK(config_path(d) == "experiments[0].kind");
    d = base();
    d["experiments"] = json::parse(R"([{"kind": "flow", "field": "family", "points": [0.5]}])");
    CHECK(config_path(d) == "experiments[0].params");
    d = base();
    d["experiments"] = json::parse(R"([{"kind": "param-sweep", "field": "lin", "p0": 1, "K": "unit", "p": [1.5]}])");
    CHECK(config_path(d) == "experiments[0].field");
    CHECK_THROWS_AS(load_scenario("/nonexistent/scenario.json"), IoError);
}

TEST_CASE("experiments accept inline fields") {
    json d = json::parse(R"({
        "schema": "flowpresheaf.scenario/1",
        "patch": {"bounds": [[-3, 3], [-3, 3]]},
        "experiments": [
            {"kind": "dil", "field": ["p1*x1", "-x2 + t"], "points": [[0, 0]], "params": [2]},
            {"kind": "dil", "field": {"components": ["p1*x1", "x2"], "params": 1}, "points": [[0, 0]], "params": [1],
             "expected": [1]}
        ]
    })");
    // the array form declares no parameters
    CHECK(config_path(d) == "experiments[0].field");
    d["experiments"][0]["field"] = json::array({"2*x1", "-x2 + t"});
    d["experiments"][0].erase("params");
    Scenario s = parse_scenario(d);
    REQUIRE(s.fields.count("experiments[0].field") == 1);
    CHECK(s.fields.at("experiments[1].field").nparams() == 1);
    Report r = run_scenario(s);
    CHECK(r.pass());
    d["experiments"][0]["field"] = json::array({"x1"});
    CHECK(config_path(d) == "experiments[0].field");
}

TEST_CASE("empty experiment list gives an empty passing report") {
    Report r = run_scenario(parse_scenario(base()));
    CHECK(r.experiments.empty());
    CHECK(r.pass());
    json j = report_json(r);
    CHECK(j["experiments"].empty());
    CHECK(j["pass"] == true);
    CHECK(j["scenario"] == base());
}

TEST_CASE("formats") {
    CHECK(parse_formats("json,csv") == std::vector<Format>{Format::Json, Format::Csv});
    CHECK(parse_formats("csv") == std::vector<Format>{Format::Csv});
    CHECK_THROWS_AS(parse_formats("xml"), UnknownFormat);
    CHECK_THROWS_AS(parse_formats("json,xml"), UnknownFormat);
    CHECK_THROWS_AS(parse_formats(""), UnknownFormat);
}

TEST_CASE("seed override from the environment") {
    Scenario s = parse_scenario(base());
    ::unsetenv("FLOWPRESHEAF_SEED");
    apply_seed_override(s);
    CHECK(s.seed == 3);
    ::setenv("FLOWPRESHEAF_SEED", "41", 1);
    apply_seed_override(s);
    CHECK(s.seed == 41);
    ::setenv("FLOWPRESHEAF_SEED", "4x", 1);
    CHECK_THROWS_AS(apply_seed_override(s), ConfigError);
    ::unsetenv("FLOWPRESHEAF_SEED");
}

TEST_CASE("csv round-trips to identical rows") {
    Table t{"demo", {"a", "b"}, {}};
    t.rows.push_back({"first", {0.1, 1.0 / 3.0}, Check{1e-17, 2.5e-3}});
    t.rows.push_back({"second", {-7.25, 6.02214076e23}, std::nullopt});
    t.rows.push_back({"third", {NAN, 5e-324}, Check{3.0, 2.0}});
    auto rows = split_csv(table_csv(t));
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == std::vector<std::string>{"invariant", "a", "b", "measured", "threshold", "pass"});
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& cells = rows[i + 1];
        REQUIRE(cells.size() == 6);
        CHECK(cells[0] == t.rows[i].invariant);
        for (std::size_t k = 0; k < 2; ++k) {
            double v = t.rows[i].values[k];
            if (std::isnan(v)) CHECK(cells[k + 1].empty());
            else CHECK(std::strtod(cells[k + 1].c_str(), nullptr) == v);
        }
        if (t.rows[i].check) {
            CHECK(std::stod(cells[3]) == t.rows[i].check->measured);
            CHECK(std::stod(cells[4]) == t.rows[i].check->threshold);
            CHECK(cells[5] == (t.rows[i].check->pass() ? "true" : "false"));
        } else {
            CHECK(cells[5].empty());
        }
    }
}

TEST_CASE("parallel_for rethrows the lowest failing index") {
    std::vector<int> hit(50, 0);
    parallel_for(50, 4, [&](std::size_t i) { hit[i] += 1; });
    CHECK(std::count(hit.begin(), hit.end(), 1) == 50);
    try {
        parallel_for(20, 4, [](std::size_t i) {
            if (i % 7 == 3) throw DomainError(std::to_string(i));
        });
        FAIL("expected a throw");
    } catch (const DomainError& e) {
        CHECK(std::string(e.what()) == "3");
    }
}

TEST_CASE("runs are deterministic across worker counts") {
    json d = base();
    d["experiments"] = json::parse(R"([
        {"kind": "flow", "field": "lin", "points": [0.5, -1], "t1": 0.5, "tuples": 5},
        {"kind": "dil", "field": "lin", "points": [0, 1], "expected": [1, 1]},
        {"kind": "cover", "region": {"type": "skewed-ball", "xc": [0], "radius": 0.2}, "verify_samples": 2000},
        {"kind": "metric-equiv", "g2": ["4"], "K": "unit", "pairs": 20, "range": [1.99, 2.01]}
    ])");
    Scenario s = parse_scenario(d);
    Report a = run_scenario(s, {1}), b = run_scenario(s, {3});
    CHECK(report_json(a).dump() == report_json(b).dump());
    CHECK(a.pass());

    // pass flags are recomputable from the recorded numbers
    json j = report_json(a);
    for (const auto& e : j["experiments"]) {
        bool all = true;
        for (const auto& t : e["tables"])
            for (const auto& r : t["rows"]) {
                CHECK_FALSE(r["invariant"].get<std::string>().empty());
                if (r["pass"].is_null()) continue;
                bool ok = r["measured"].get<double>() <= r["threshold"].get<double>();
                CHECK(r["pass"] == ok);
                all = all && ok;
            }
        CHECK(e["pass"] == all);
    }
}

TEST_CASE("param sweep against both Gronwall bounds") {
    json d = base();
    d["experiments"] = json::parse(R"([
        {"kind": "param-sweep", "field": "family", "p0": 1, "dyadic": {"kmax": 6}, "final": [0, 0.5], "K": "unit"},
        {"kind": "param-sweep", "field": "family", "p0": 1, "dyadic": {"kmax": 6}, "final": [0, 0.5], "K": "unit",
         "bound": "corrected"}
    ])");
    Report r = run_scenario(parse_scenario(d), {2});
    REQUIRE(r.experiments.size() == 2);
    const auto& lit = r.experiments[0];
    REQUIRE_FALSE(lit.error);
    // q0 = e^{p/2} - e^{1/2} for X = p x on [0, 1], up to the trapezoid rule in the time integral
    for (const auto& row : lit.tables[0].rows) {
        double p = row.values[0], exact = std::fabs(std::exp(p / 2) - std::exp(0.5));
        CHECK(row.values[2] >= exact * (1 - 1e-9));
        CHECK(std::fabs(row.values[2] - exact) <= 1e-3 * exact);
    }
    // ratio to the stated bound tends to (T e^T) / (e^T - 1) = 1.27 > 1.2 from k = 5 on
    CHECK(lit.tables[0].rows[3].check->pass());
    CHECK_FALSE(lit.tables[0].rows[4].check->pass());
    CHECK(lit.tables[1].pass());  // monotone
    CHECK_FALSE(lit.pass());
    CHECK(r.experiments[1].pass());
    REQUIRE(lit.plot.size() == 6);
    CHECK(lit.plot.front().first == std::ldexp(1.0, -6));
}

TEST_CASE("emit report writes json, timings and csv") {
    json d = base();
    d["experiments"] = json::parse(R"([{"kind": "dil", "field": "lin", "points": [0.5], "expected": [1]}])");
    Report r = run_scenario(parse_scenario(d));
    auto dir = std::filesystem::temp_directory_path() / "flowpresheaf_lab_test";
    std::filesystem::remove_all(dir);
    auto files = emit_report(r, dir.string(), {Format::Json, Format::Csv});
    CHECK(files.size() == 3);
    CHECK(std::filesystem::exists(dir / "report.json"));
    CHECK(std::filesystem::exists(dir / "timings.json"));
    CHECK(std::filesystem::exists(dir / "e0_dil_dilatation.csv"));
    std::ifstream in(dir / "report.json");
    json back = json::parse(in);
    CHECK(back == report_json(r));
    CHECK_FALSE(back.dump().find("seconds") != std::string::npos);
    std::filesystem::remove_all(dir);
    CHECK_THROWS_AS(emit_report(r, "/proc/flowpresheaf/denied", {Format::Json}), IoError);
}

TEST_CASE("computational errors carry scenario context") {
    json d = base();
    d["fields"]["blow"] = json::array({"x^2"});
    d["experiments"] = json::parse(R"([{"kind": "flow", "name": "escape", "field": "blow", "points": [1], "t1": 2}])");
    Report r = run_scenario(parse_scenario(d));
    REQUIRE(r.experiments[0].error);
    CHECK(r.experiments[0].error->find("experiments[0] (flow 'escape')") == 0);
    CHECK_FALSE(r.pass());
}
