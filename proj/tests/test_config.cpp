#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "attrinet/config.hpp"

using namespace attrinet;
namespace fs = std::filesystem;

TEST_CASE("parse key = value with comments and overrides") {
  const ConfigMap m = parse_config("# header\na = 1\n  b=two words  # trailing\n\na = 3\n");
  CHECK(m.at("a") == "3");
  CHECK(m.at("b") == "two words");
  CHECK(m.size() == 2);
  CHECK_THROWS_AS(parse_config("just a line\n"), ConfigError);
  CHECK_THROWS_AS(parse_config(" = 4\n"), ConfigError);
}

TEST_CASE("includes resolve relative to the including file") {
  const fs::path dir = fs::temp_directory_path() / ("attrinet_cfg_" + std::to_string(::getpid()));
  fs::create_directories(dir / "sub");
  std::ofstream(dir / "sub" / "base.txt") << "x = 1\ny = 2\n";
  std::ofstream(dir / "main.txt") << "include = sub/base.txt\ny = 5\n";
  std::ofstream(dir / "loop.txt") << "include loop.txt\n";
  const ConfigMap m = read_config(dir / "main.txt");
  CHECK(m.at("x") == "1");
  CHECK(m.at("y") == "5");
  CHECK_THROWS_AS(read_config(dir / "loop.txt"), ConfigError);
  CHECK_THROWS_AS(read_config(dir / "missing.txt"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("typed reads and unknown keys") {
  ConfigReader r(ConfigMap{{"n", "12"}, {"f", "0.25"}, {"b", "yes"}, {"l", "a, b,,c"}, {"typo", "1"}, {"s", "-3"}});
  CHECK(r.get_int("n", 0) == 12);
  CHECK(r.get_double("f", 0) == 0.25);
  CHECK(r.get_bool("b", false));
  CHECK(r.get_list("l", {}) == std::vector<std::string>{"a", "b", "c"});
  CHECK(r.get_double("absent", 7.5) == 7.5);
  CHECK_THROWS_AS(r.get_u64("s", 0), ConfigError);
  CHECK_THROWS_AS(r.require("nope"), ConfigError);
  try {
    r.reject_unknown();
    FAIL("expected unknown key error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("typo") != std::string::npos);
  }
  r.accept("typo");
  CHECK_NOTHROW(r.reject_unknown());

  ConfigReader bad(ConfigMap{{"n", "12x"}, {"b", "maybe"}});
  CHECK_THROWS_AS(bad.get_int("n", 0), ConfigError);
  CHECK_THROWS_AS(bad.get_bool("b", false), ConfigError);
}

TEST_CASE("format and parse are inverse") {
  const ConfigMap m{{"alpha", "0.5"}, {"name", "x y"}, {"seed", "9"}};
  CHECK(parse_config(format_config(m)) == m);
}
