#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "flowpresheaf/lab.hpp"

using namespace flowpresheaf;

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kConfig = 2;

int report_config_error(const ConfigError& e) {
    std::cerr << "config error at " << (e.path.empty() ? "<root>" : e.path) << ": " << e.message << "\n";
    return kConfig;
}

int run_command(const std::string& path, const std::string& out, std::size_t workers, const std::string& format) {
    try {
        auto formats = parse_formats(format);
        Scenario s = load_scenario(path);
        apply_seed_override(s);
        Report r = run_scenario(s, {workers});
        emit_report(r, out, formats);
        for (const auto& e : r.experiments) {
            std::cout << "e" << e.index << " " << e.kind << " " << e.name << ": " << (e.pass() ? "PASS" : "FAIL");
            if (e.error) std::cout << " (" << *e.error << ")";
            std::cout << "\n";
        }
        std::cout << (r.pass() ? "all experiments passed" : "some experiments failed") << "\n";
        return r.pass() ? kPass : kFail;
    } catch (const ConfigError& e) {
        return report_config_error(e);
    } catch (const UnknownFormat& e) {
        std::cerr << e.what() << "\n";
        return kConfig;
    } catch (const IoError& e) {
        std::cerr << e.what() << "\n";
        return kConfig;
    }
}

int validate_command(const std::string& path) {
    try {
        Scenario s = load_scenario(path);
        apply_seed_override(s);
        std::cout << path << ": ok (" << s.experiments.size() << " experiments, seed " << s.seed << ")\n";
        return kPass;
    } catch (const ConfigError& e) {
        return report_config_error(e);
    } catch (const IoError& e) {
        std::cerr << e.what() << "\n";
        return kConfig;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow presheaf lab"};
    app.require_subcommand(1);

    std::string scenario, out, format = "json,csv";
    std::size_t workers = 1;
    auto* run = app.add_subcommand("run", "run a scenario and write its report");
    run->add_option("scenario", scenario, "scenario JSON file")->required();
    run->add_option("--out", out, "output directory")->required();
    run->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    run->add_option("--format", format, "comma separated output formats: json, csv");

    std::string target;
    auto* validate = app.add_subcommand("validate", "check a scenario against the schema");
    validate->add_option("scenario", target, "scenario JSON file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kConfig;
    }
    if (*run) return run_command(scenario, out, workers, format);
    return validate_command(target);
}
