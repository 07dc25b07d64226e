// Command-line front end: `check` (parse + gate), `grade` (full grading run
// with JUnit XML output), and `run` (evaluate a file under a policy with the
// mock filesystem). Exit codes: 0 clean/passed, 1 failures or violations,
// 2 internal error, 3 usage error.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "miniml/featuregate.hpp"
#include "miniml/grader.hpp"
#include "miniml/report.hpp"
#include "miniml/runtime.hpp"
#include "miniml/syntax.hpp"
#include "miniml/vfs.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kInternal = 2;
constexpr int kUsage = 3;

std::optional<std::string> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return std::nullopt;
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int cmd_check(const std::string& student_path, const std::string& exercise_dir) {
  auto source = read_file(student_path);
  if (!source) {
    std::cerr << "error: cannot read " << student_path << "\n";
    return kInternal;
  }
  miniml::ExerciseBundle bundle;
  try {
    bundle = miniml::load_bundle(exercise_dir);
  } catch (const miniml::BundleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  miniml::Program prog;
  try {
    prog = miniml::parse(*source, student_path);
  } catch (const miniml::LexError& e) {
    std::cout << "parse error at " << miniml::span_to_string(e.span) << ": "
              << e.what() << "\n";
    return kFailed;
  } catch (const miniml::ParseError& e) {
    std::cout << "parse error at " << miniml::span_to_string(e.span) << ": "
              << e.what() << "\n";
    return kFailed;
  }
  miniml::Prelude full = miniml::default_prelude();
  miniml::Prelude restricted;
  try {
    restricted = miniml::restrict_prelude(full, bundle.policy);
  } catch (const miniml::PolicyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  std::vector<miniml::Violation> violations =
      miniml::scan_syntax(prog, bundle.policy);
  for (auto& v : miniml::check_names(prog, restricted, full))
    violations.push_back(std::move(v));
  for (const auto& v : violations)
    std::cout << v.message << " at " << student_path << ":"
              << miniml::span_to_string(v.span) << "\n";
  return violations.empty() ? kOk : kFailed;
}

int cmd_grade(const std::string& student_path, const std::string& exercise_dir,
              const std::string& out_path, std::optional<std::uint64_t> seed,
              bool fixed_time, bool audit, double timeout_secs) {
  auto source = read_file(student_path);
  if (!source) {
    std::cerr << "error: cannot read " << student_path << "\n";
    return kInternal;
  }
  miniml::ExerciseBundle bundle;
  try {
    bundle = miniml::load_bundle(exercise_dir);
  } catch (const miniml::BundleError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  miniml::GradeOptions options;
  options.seed_override = seed;
  options.audit = audit;
  options.timeout_secs = timeout_secs;
  miniml::TestReport report = miniml::grade(*source, bundle, options);

  std::string xml = miniml::to_junit(report, fixed_time);
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::binary);
    if (!out) {
      std::cerr << "error: cannot write " << out_path << "\n";
      return kInternal;
    }
    out << xml;
    if (!out) {
      std::cerr << "error: cannot write " << out_path << "\n";
      return kInternal;
    }
  }
  std::cout << miniml::to_text(report);

  bool all_passed = report.violations.empty();
  for (const auto& c : report.cases)
    if (c.verdict.kind != miniml::Verdict::Kind::Passed) all_passed = false;
  if (report.cases.empty() && !report.violations.empty()) all_passed = false;
  return all_passed ? kOk : kFailed;
}

int cmd_run(const std::string& file_path, const std::string& policy_name,
            const std::string& fs_path) {
  auto source = read_file(file_path);
  if (!source) {
    std::cerr << "error: cannot read " << file_path << "\n";
    return kInternal;
  }
  miniml::Node initial = miniml::Node::make_dir();
  if (!fs_path.empty()) {
    auto fs_json = read_file(fs_path);
    if (!fs_json) {
      std::cerr << "error: cannot read " << fs_path << "\n";
      return kInternal;
    }
    try {
      initial = miniml::tree_from_json(nlohmann::json::parse(*fs_json));
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "error: " << fs_path << ": " << e.what() << "\n";
      return kInternal;
    }
  }

  miniml::Program prog;
  try {
    prog = miniml::parse(*source, file_path);
  } catch (const miniml::LexError& e) {
    std::cerr << "parse error at " << miniml::span_to_string(e.span) << ": "
              << e.what() << "\n";
    return kFailed;
  } catch (const miniml::ParseError& e) {
    std::cerr << "parse error at " << miniml::span_to_string(e.span) << ": "
              << e.what() << "\n";
    return kFailed;
  }

  miniml::Prelude full = miniml::default_prelude();
  miniml::Prelude prelude = full;
  if (policy_name == "default") {
    miniml::FeaturePolicy policy = miniml::default_policy();
    auto violations = miniml::scan_syntax(prog, policy);
    miniml::Prelude restricted = miniml::restrict_prelude(full, policy);
    for (auto& v : miniml::check_names(prog, restricted, full))
      violations.push_back(std::move(v));
    if (!violations.empty()) {
      for (const auto& v : violations)
        std::cerr << v.message << " at " << file_path << ":"
                  << miniml::span_to_string(v.span) << "\n";
      return kFailed;
    }
    prelude = restricted;
  }

  miniml::VfsState vfs = miniml::VfsState::reset(initial);
  miniml::RunOutcome o =
      miniml::evaluate(prog, prelude, vfs, miniml::Limits{});
  std::cout << o.stdout_data;
  miniml::InspectionReport insp = vfs.inspect();
  for (const auto& p : insp.created) std::cout << "created " << p << "\n";
  for (const auto& p : insp.modified) std::cout << "modified " << p << "\n";
  for (const auto& p : insp.deleted) std::cout << "deleted " << p << "\n";
  switch (o.kind) {
    case miniml::RunOutcome::Kind::Done:
      return kOk;
    case miniml::RunOutcome::Kind::LangTrap:
      std::cerr << "uncaught exception: "
                << miniml::print_value(o.exception) << "\n";
      return kFailed;
    case miniml::RunOutcome::Kind::ResourceTrap:
      std::cerr << "resource limit exceeded: "
                << miniml::resource_name(o.resource) << "\n";
      return kFailed;
    case miniml::RunOutcome::Kind::Deadlock:
      std::cerr << "deadlock: all threads blocked\n";
      return kFailed;
  }
  return kInternal;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MiniML exercise toolkit: gate, grade and run submissions"};
  app.require_subcommand(1);

  std::string check_student, check_exercise;
  CLI::App* check = app.add_subcommand("check", "parse and feature-gate a submission");
  check->add_option("student", check_student, "submission .mml file")->required();
  check->add_option("--exercise", check_exercise, "exercise bundle directory")->required();

  std::string grade_student, grade_exercise, grade_out;
  std::uint64_t grade_seed = 0;
  bool have_seed = false, fixed_time = false, audit = false;
  double timeout_secs = 10.0;
  CLI::App* grade = app.add_subcommand("grade", "grade a submission against a bundle");
  grade->add_option("student", grade_student, "submission .mml file")->required();
  grade->add_option("--exercise", grade_exercise, "exercise bundle directory")->required();
  grade->add_option("--out", grade_out, "JUnit XML output path");
  CLI::Option* seed_opt = grade->add_option("--seed", grade_seed, "override the bundle seed");
  grade->add_flag("--fixed-time", fixed_time, "pin time attributes for byte-stable output");
  grade->add_flag("--audit", audit, "append the primitive-call log to the text output");
  grade->add_option("--timeout-secs", timeout_secs, "per-test wall-clock watchdog (<=0 disables)");

  std::string run_file, run_policy = "default", run_fs;
  CLI::App* run = app.add_subcommand("run", "evaluate a file with the mock filesystem");
  run->add_option("file", run_file, ".mml file to run")->required();
  run->add_option("--policy", run_policy, "default|none")
      ->check(CLI::IsMember({"default", "none"}));
  run->add_option("--fs", run_fs, "initial filesystem tree (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  have_seed = seed_opt->count() > 0;
  try {
    if (check->parsed()) return cmd_check(check_student, check_exercise);
    if (grade->parsed())
      return cmd_grade(grade_student, grade_exercise, grade_out,
                       have_seed ? std::optional<std::uint64_t>(grade_seed)
                                 : std::nullopt,
                       fixed_time, audit, timeout_secs);
    if (run->parsed()) return cmd_run(run_file, run_policy, run_fs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
