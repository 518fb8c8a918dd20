#include "doctest.h"

#include "nmrc/cli.hpp"
#include "nmrc/phantom.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "nmrc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = nmrc::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  std::random_device rd;
  const fs::path p = fs::temp_directory_path() / ("nmrc_cli_" + name + "_" + std::to_string(rd()));
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("normalize reports the normalized rates") {
  const Result r = invoke({"normalize", "--t1-ms", "2000", "--t2-ms", "200"});
  REQUIRE(r.code == nmrc::cli::kExitOk);
  const json j = json::parse(r.out);
  const double w = 2 * M_PI * 32.3;
  CHECK(j.at("Gamma").get<double>() == doctest::Approx(2 * M_PI / (w * 0.2)));
  CHECK(j.at("gamma").get<double>() == doctest::Approx(2 * M_PI / (w * 2.0)));
  CHECK(j.at("horizontal_line").at("z0").get<double>() == doctest::Approx(-1.0 / 18.0));
}

TEST_CASE("usage errors exit with 2") {
  CHECK(invoke({}).code == nmrc::cli::kExitUsage);
  CHECK(invoke({"normalize", "--t1-ms", "-3", "--t2-ms", "1"}).code == nmrc::cli::kExitUsage);
  CHECK(invoke({"flow", "--law", "sideways", "--costate", "1,0", "--duration", "1"}).code ==
        nmrc::cli::kExitUsage);
  CHECK(invoke({"phantom", "--out-dir", scratch_dir("bad").string()}).code ==
        nmrc::cli::kExitUsage);
  CHECK(invoke({"geometry", "probe", "--state", "0.1,0.2,0.3"}).code == nmrc::cli::kExitUsage);
  CHECK(invoke({"synthesis", "--config", "/nonexistent/model.json"}).code ==
        nmrc::cli::kExitUsage);
  CHECK(invoke({"--help"}).code == nmrc::cli::kExitOk);
}

TEST_CASE("synthesis artifacts are deterministic and tagged") {
  const fs::path a = scratch_dir("syn_a"), b = scratch_dir("syn_b");
  const Result ra = invoke({"synthesis", "--preset", "fluid", "--compare-ir", "--out-dir", a.string()});
  const Result rb = invoke({"synthesis", "--preset", "fluid", "--compare-ir", "--out-dir", b.string()});
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  for (const char* name : {"synthesis.json", "synthesis.csv", "synthesis_ir.csv"}) {
    REQUIRE(fs::exists(a / name));
    CHECK(slurp(a / name) == slurp(b / name));
  }
  const json j = json::parse(ra.out);
  const std::string hash = j.at("config_hash");
  CHECK(hash.size() == 16);
  std::istringstream csv(slurp(a / "synthesis.csv"));
  std::string first, header;
  std::getline(csv, first);
  std::getline(csv, header);
  CHECK(first == "# config " + hash);
  CHECK(header.find(',') != std::string::npos);
  CHECK(j.at("tmin_faster").get<bool>());

  // Different model, different hash.
  const Result rg = invoke({"synthesis", "--preset", "grey", "--out-dir", a.string()});
  REQUIRE(rg.code == 0);
  CHECK(json::parse(rg.out).at("config_hash") != hash);
}

TEST_CASE("config hash") {
  CHECK(nmrc::cli::config_hash("") == "cbf29ce484222325");
  CHECK(nmrc::cli::config_hash("a") == "af63dc4c8601ec8c");
  CHECK(nmrc::cli::config_hash("a") != nmrc::cli::config_hash("b"));
}

TEST_CASE("phantom pixel levels") {
  const fs::path d = scratch_dir("ph");
  const Result r = invoke({"phantom", "--q1-level", "0", "--q2-level", "1", "--resolution", "64",
                           "--out-dir", d.string()});
  REQUIRE(r.code == 0);
  const std::string pgm = slurp(d / "phantom.pgm");
  REQUIRE(pgm.rfind("P5\n64 64\n255\n", 0) == 0);
  const std::size_t off = std::string("P5\n64 64\n255\n").size();
  REQUIRE(pgm.size() == off + 64 * 64);
  auto px = [&](int x, int y) { return static_cast<unsigned char>(pgm[off + y * 64 + x]); };
  CHECK(px(32, 32) == 0);    // saturated disk
  CHECK(px(32 + 20, 32) == 255);  // ring at |q2| = 1
  CHECK(px(0, 0) == 0);      // background

  const nmrc::GrayImage ref = nmrc::render_reference({}, 64);
  CHECK(ref.at(32, 32) == 255);
  CHECK(nmrc::gray_level(0.5) == 128);
  CHECK(nmrc::gray_level(2.0) == 255);
  CHECK(nmrc::gray_level(-1.0) == 0);
  CHECK_THROWS(nmrc::render_phantom(0.1, 0.2, {}, 4));
}
