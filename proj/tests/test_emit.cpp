#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "skiplab/emit.hpp"

using namespace skiplab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string temp_dir() {
    static int counter = 0;
    fs::path p = fs::temp_directory_path() / ("skiplab_emit_" + std::to_string(::getpid()) + "_" +
                                              std::to_string(counter++));
    fs::create_directories(p);
    return p.string();
}

size_t count_occurrences(const std::string& hay, const std::string& needle) {
    size_t n = 0, pos = 0;
    while ((pos = hay.find(needle, pos)) != std::string::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

} // namespace

TEST_CASE("fmt17 round-trips doubles exactly") {
    std::vector<double> vals = {0.0, 1.0, -1.0 / 3.0, 2.718281828459045e-12, 6.02e23, 0.1};
    for (double v : vals) REQUIRE(std::stod(fmt17(v)) == v);
}

TEST_CASE("jsonl preserves field order and encodes nulls") {
    JsonLine l;
    l.integer("step", 3).text("group", "enc.b2.").num("x", 0.5).opt_int("t", std::nullopt);
    REQUIRE(l.str() == "{\"step\":3,\"group\":\"enc.b2.\",\"x\":0.5,\"t\":null}");
}

TEST_CASE("csv writes a header plus one row per record") {
    std::string dir = temp_dir();
    {
        CsvWriter csv(dir + "/t.csv", {"a", "b"});
        csv.row({"1", "2"});
        csv.row({"3", "4"});
        REQUIRE_THROWS_AS(csv.row({"lonely"}), config_error);
    }
    std::string content = slurp(dir + "/t.csv");
    REQUIRE(count_occurrences(content, "\n") == 3);
    REQUIRE(content.rfind("a,b\n", 0) == 0);
}

TEST_CASE("pgm bytes follow the P5 format") {
    std::string dir = temp_dir();
    Tensor img({2, 3});
    img.at(0, 0) = 0.0;
    img.at(0, 1) = 0.5;
    img.at(0, 2) = 1.0;
    img.at(1, 0) = 2.0;  // clamped to 1
    img.at(1, 1) = -1.0; // clamped to 0
    img.at(1, 2) = 0.25;
    write_pgm(dir + "/t.pgm", img);
    std::string content = slurp(dir + "/t.pgm");
    REQUIRE(content.rfind("P5\n3 2\n255\n", 0) == 0);
    std::string pixels = content.substr(content.size() - 6);
    REQUIRE(static_cast<unsigned char>(pixels[0]) == 0);
    REQUIRE(static_cast<unsigned char>(pixels[1]) == 128);
    REQUIRE(static_cast<unsigned char>(pixels[2]) == 255);
    REQUIRE(static_cast<unsigned char>(pixels[3]) == 255);
    REQUIRE(static_cast<unsigned char>(pixels[4]) == 0);
    REQUIRE(static_cast<unsigned char>(pixels[5]) == 64);
}

TEST_CASE("svg plots") {
    std::string dir = temp_dir();
    SECTION("empty series is an error") {
        SvgPanel p{"t", "x", "y", {}};
        REQUIRE_THROWS_AS(emit_svg_plot(dir + "/e.svg", {p}), config_error);
        SvgSeries s;
        s.name = "empty";
        p.series.push_back(s);
        REQUIRE_THROWS_AS(emit_svg_plot(dir + "/e.svg", {p}), config_error);
    }
    SECTION("single point series renders a marker") {
        SvgPanel p{"点", "x", "y", {}};
        SvgSeries s;
        s.name = "one";
        s.scatter = true;
        s.xs = {1.0};
        s.ys = {2.0};
        p.series.push_back(s);
        emit_svg_plot(dir + "/one.svg", {p});
        std::string content = slurp(dir + "/one.svg");
        REQUIRE(count_occurrences(content, "<circle") == 1);
        REQUIRE(content.find("<svg xmlns") != std::string::npos);
    }
    SECTION("four panels carry four panel groups with axis labels") {
        std::vector<SvgPanel> panels;
        for (int i = 0; i < 4; ++i) {
            SvgPanel p{"panel " + std::to_string(i), "xlab" + std::to_string(i),
                       "ylab" + std::to_string(i), {}};
            SvgSeries s;
            s.name = "s";
            s.xs = {0, 1, 2};
            s.ys = {1.0 * i, 2, 3};
            p.series.push_back(s);
            panels.push_back(p);
        }
        emit_svg_plot(dir + "/four.svg", panels, "quad");
        std::string content = slurp(dir + "/four.svg");
        REQUIRE(count_occurrences(content, "<g class=\"panel\">") == 4);
        for (int i = 0; i < 4; ++i) {
            REQUIRE(content.find("xlab" + std::to_string(i)) != std::string::npos);
            REQUIRE(content.find("ylab" + std::to_string(i)) != std::string::npos);
        }
    }
    SECTION("full-precision data rides in a comment") {
        SvgPanel p{"t", "x", "y", {}};
        SvgSeries s;
        s.name = "vals";
        s.xs = {0.0};
        s.ys = {1.0 / 3.0};
        p.series.push_back(s);
        emit_svg_plot(dir + "/prec.svg", {p});
        std::string content = slurp(dir + "/prec.svg");
        REQUIRE(content.find(fmt17(1.0 / 3.0)) != std::string::npos);
    }
}
