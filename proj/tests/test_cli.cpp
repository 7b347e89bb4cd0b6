#include <catch2/catch_amalgamated.hpp>

#include "sgdplan/report.hpp"

using namespace sgdplan;

namespace {
Report sample() {
  Report r;
  r.command = "demo a=1";
  r.columns = {"name", "value"};
  r.row({"alpha", fmt_num(1336.32)});
  r.row({"beta, gamma", fmt_num(0.0186153)});
  r.notes = {"provenance note"};
  return r;
}
}  // namespace

TEST_CASE("report: identical inputs render byte-identical output") {
  for (ReportFormat f :
       {ReportFormat::Table, ReportFormat::Csv, ReportFormat::Json})
    CHECK(sample().render(f) == sample().render(f));
}

TEST_CASE("report: csv escapes separators, uses '.' decimal point") {
  auto csv = sample().render_csv();
  CHECK(csv == "name,value\nalpha,1336.32\n\"beta, gamma\",0.0186153\n");
}

TEST_CASE("report: json carries schema version and ordered rows") {
  auto j = nlohmann::json::parse(sample().render_json());
  CHECK(j["schema"] == 1);
  CHECK(j["command"] == "demo a=1");
  REQUIRE(j["rows"].size() == 2);
  CHECK(j["rows"][0]["name"] == "alpha");
  CHECK(j["rows"][1]["value"] == "0.0186153");
  CHECK(j["notes"][0] == "provenance note");
}

TEST_CASE("report: table pads columns and prints notes") {
  auto t = sample().render_table();
  CHECK(t.find("# demo a=1\n") == 0);
  CHECK(t.find("note: provenance note\n") != std::string::npos);
  CHECK(t.find("beta, gamma  0.0186153") != std::string::npos);
}

TEST_CASE("fmt_num: locale-independent fixed significant digits") {
  CHECK(fmt_num(1336.3243) == "1336.32");
  CHECK(fmt_num(0.5385799) == "0.53858");
  CHECK(fmt_num(7.83652e-4) == "0.000783652");
  CHECK(fmt_num(90.0, 4) == "90");
}

TEST_CASE("parse_format rejects unknown formats") {
  CHECK(parse_format("json") == ReportFormat::Json);
  REQUIRE_THROWS(parse_format("yaml"));
}
