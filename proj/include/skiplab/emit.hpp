#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "skiplab/errors.hpp"
#include "skiplab/tensor.hpp"

namespace skiplab {

// 17 significant digits: enough to round-trip any double exactly.
inline std::string fmt17(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    return out;
}

// Insertion-ordered JSON object line; field order is part of the record
// schema, so a generic map-based serializer is not used here.
class JsonLine {
public:
    JsonLine& num(const std::string& key, double v) { return raw(key, fmt17(v)); }
    JsonLine& integer(const std::string& key, long long v) { return raw(key, std::to_string(v)); }
    JsonLine& text(const std::string& key, const std::string& v) {
        return raw(key, "\"" + json_escape(v) + "\"");
    }
    JsonLine& boolean(const std::string& key, bool v) { return raw(key, v ? "true" : "false"); }
    JsonLine& null(const std::string& key) { return raw(key, "null"); }
    JsonLine& opt_num(const std::string& key, const std::optional<double>& v) {
        return v ? num(key, *v) : null(key);
    }
    JsonLine& opt_int(const std::string& key, const std::optional<int>& v) {
        return v ? integer(key, *v) : null(key);
    }

    std::string str() const {
        std::string out = "{";
        for (size_t i = 0; i < fields_.size(); ++i) {
            if (i) out += ",";
            out += "\"" + fields_[i].first + "\":" + fields_[i].second;
        }
        return out + "}";
    }

private:
    std::vector<std::pair<std::string, std::string>> fields_;

    JsonLine& raw(const std::string& key, std::string value) {
        fields_.emplace_back(key, std::move(value));
        return *this;
    }
};

inline void ensure_parent_dir(const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
        if (ec) throw io_error("cannot create directory " + p.parent_path().string() + ": " + ec.message());
    }
}

class JsonlWriter {
public:
    explicit JsonlWriter(const std::string& path) : path_(path) {
        ensure_parent_dir(path);
        out_.open(path);
        if (!out_) throw io_error("cannot open " + path + " for writing");
    }

    void line(const JsonLine& l) { line(l.str()); }
    void line(const std::string& s) {
        out_ << s << "\n";
        if (!out_) throw io_error("write failed on " + path_);
    }

private:
    std::string path_;
    std::ofstream out_;
};

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header) : path_(path) {
        ensure_parent_dir(path);
        out_.open(path);
        if (!out_) throw io_error("cannot open " + path + " for writing");
        row(header);
        header_width_ = header.size();
    }

    void row(const std::vector<std::string>& cells) {
        if (header_width_ && cells.size() != header_width_)
            throw config_error("csv row width mismatch in " + path_);
        for (size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << "\n";
        if (!out_) throw io_error("write failed on " + path_);
    }

private:
    std::string path_;
    std::ofstream out_;
    size_t header_width_ = 0;
};

// Binary PGM (P5), one byte per pixel, value = round(255 * score).
inline void write_pgm(const std::string& path, const Tensor& image) {
    if (image.rank() != 2) throw config_error("write_pgm: rank-2 image required");
    ensure_parent_dir(path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
    for (double v : image.data) {
        double clamped = std::min(1.0, std::max(0.0, v));
        unsigned char byte = static_cast<unsigned char>(std::lround(255.0 * clamped));
        out.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!out) throw io_error("write failed on " + path);
}

// ---- SVG plotting ----

struct SvgSeries {
    std::string name;
    std::vector<double> xs, ys;
    bool scatter = false;
    std::vector<double> sizes;        // optional per-point radius (bubble)
    std::vector<std::string> colors;  // optional per-point fill
};

struct SvgPanel {
    std::string title, xlabel, ylabel;
    std::vector<SvgSeries> series;
};

namespace svg_detail {

inline const char* palette(size_t i) {
    static const char* colors[] = {"#1f6fb2", "#d1495b", "#3a9d5d", "#8d6cab", "#c77f2e", "#3aa0a6"};
    return colors[i % 6];
}

inline std::string coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

} // namespace svg_detail

// Standalone SVG 1.1 with axes, tick labels, legend, and the raw series
// values embedded in a comment at full precision.
inline void emit_svg_plot(const std::string& path, const std::vector<SvgPanel>& panels,
                          const std::string& title = "") {
    if (panels.empty()) throw config_error("emit_svg_plot: no panels");
    for (const auto& p : panels) {
        if (p.series.empty()) throw config_error("emit_svg_plot: panel '" + p.title + "' has no series");
        for (const auto& s : p.series)
            if (s.xs.empty() || s.xs.size() != s.ys.size())
                throw config_error("emit_svg_plot: empty or ragged series '" + s.name + "'");
    }

    const int panel_w = 420, panel_h = 300;
    const int margin_l = 64, margin_b = 46, margin_t = 34, margin_r = 16;
    int cols = panels.size() > 1 ? 2 : 1;
    int rows = (static_cast<int>(panels.size()) + cols - 1) / cols;
    int width = cols * panel_w;
    int height = rows * panel_h + (title.empty() ? 0 : 28);

    ensure_parent_dir(path);
    std::ofstream out(path);
    if (!out) throw io_error("cannot open " + path + " for writing");

    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
        << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<!-- data\n";
    for (size_t pi = 0; pi < panels.size(); ++pi)
        for (const auto& s : panels[pi].series) {
            out << "panel=" << pi << " series=" << json_escape(s.name) << "\n";
            for (size_t i = 0; i < s.xs.size(); ++i)
                out << fmt17(s.xs[i]) << " " << fmt17(s.ys[i]) << "\n";
        }
    out << "-->\n";
    out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    int top_off = 0;
    if (!title.empty()) {
        top_off = 28;
        out << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
               "font-size=\"15\" font-weight=\"bold\">"
            << json_escape(title) << "</text>\n";
    }

    for (size_t pi = 0; pi < panels.size(); ++pi) {
        const SvgPanel& panel = panels[pi];
        int px0 = static_cast<int>(pi) % cols * panel_w;
        int py0 = static_cast<int>(pi) / cols * panel_h + top_off;
        double lo_x = panel.series[0].xs[0], hi_x = lo_x;
        double lo_y = panel.series[0].ys[0], hi_y = lo_y;
        for (const auto& s : panel.series)
            for (size_t i = 0; i < s.xs.size(); ++i) {
                lo_x = std::min(lo_x, s.xs[i]);
                hi_x = std::max(hi_x, s.xs[i]);
                lo_y = std::min(lo_y, s.ys[i]);
                hi_y = std::max(hi_y, s.ys[i]);
            }
        if (hi_x == lo_x) hi_x = lo_x + 1.0;
        if (hi_y == lo_y) hi_y = lo_y + 1.0;
        double plot_w = panel_w - margin_l - margin_r;
        double plot_h = panel_h - margin_t - margin_b;
        auto sx = [&](double v) { return px0 + margin_l + (v - lo_x) / (hi_x - lo_x) * plot_w; };
        auto sy = [&](double v) { return py0 + margin_t + plot_h - (v - lo_y) / (hi_y - lo_y) * plot_h; };

        out << "<g class=\"panel\">\n";
        out << "<text x=\"" << px0 + panel_w / 2 << "\" y=\"" << py0 + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
            << json_escape(panel.title) << "</text>\n";
        // frame
        out << "<rect x=\"" << px0 + margin_l << "\" y=\"" << py0 + margin_t << "\" width=\"" << plot_w
            << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"#444\"/>\n";
        // ticks
        for (int k = 0; k <= 4; ++k) {
            double xv = lo_x + (hi_x - lo_x) * k / 4.0;
            double yv = lo_y + (hi_y - lo_y) * k / 4.0;
            char lab[32];
            out << "<line x1=\"" << svg_detail::coord(sx(xv)) << "\" y1=\"" << py0 + margin_t + plot_h
                << "\" x2=\"" << svg_detail::coord(sx(xv)) << "\" y2=\"" << py0 + margin_t + plot_h + 4
                << "\" stroke=\"#444\"/>\n";
            std::snprintf(lab, sizeof(lab), "%.3g", xv);
            out << "<text x=\"" << svg_detail::coord(sx(xv)) << "\" y=\"" << py0 + margin_t + plot_h + 16
                << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << lab
                << "</text>\n";
            out << "<line x1=\"" << px0 + margin_l - 4 << "\" y1=\"" << svg_detail::coord(sy(yv))
                << "\" x2=\"" << px0 + margin_l << "\" y2=\"" << svg_detail::coord(sy(yv))
                << "\" stroke=\"#444\"/>\n";
            std::snprintf(lab, sizeof(lab), "%.3g", yv);
            out << "<text x=\"" << px0 + margin_l - 6 << "\" y=\"" << svg_detail::coord(sy(yv) + 3)
                << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << lab
                << "</text>\n";
        }
        // axis labels
        out << "<text x=\"" << px0 + margin_l + plot_w / 2 << "\" y=\"" << py0 + panel_h - 10
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << json_escape(panel.xlabel) << "</text>\n";
        out << "<text x=\"" << px0 + 14 << "\" y=\"" << py0 + margin_t + plot_h / 2
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 "
            << px0 + 14 << " " << py0 + margin_t + plot_h / 2 << ")\">" << json_escape(panel.ylabel)
            << "</text>\n";

        for (size_t si = 0; si < panel.series.size(); ++si) {
            const SvgSeries& s = panel.series[si];
            const char* color = svg_detail::palette(si);
            if (s.scatter) {
                for (size_t i = 0; i < s.xs.size(); ++i) {
                    double r = s.sizes.empty() ? 2.2 : s.sizes[i];
                    const std::string fill = s.colors.empty() ? color : s.colors[i];
                    out << "<circle cx=\"" << svg_detail::coord(sx(s.xs[i])) << "\" cy=\""
                        << svg_detail::coord(sy(s.ys[i])) << "\" r=\"" << svg_detail::coord(r)
                        << "\" fill=\"" << fill << "\" fill-opacity=\"0.75\"/>\n";
                }
            } else {
                out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.4\" points=\"";
                for (size_t i = 0; i < s.xs.size(); ++i)
                    out << svg_detail::coord(sx(s.xs[i])) << "," << svg_detail::coord(sy(s.ys[i])) << " ";
                out << "\"/>\n";
            }
        }
        // legend
        for (size_t si = 0; si < panel.series.size(); ++si) {
            const SvgSeries& s = panel.series[si];
            double lx = px0 + margin_l + 8, ly = py0 + margin_t + 12 + 14.0 * si;
            out << "<rect x=\"" << lx << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\""
                << svg_detail::palette(si) << "\"/>\n";
            out << "<text x=\"" << lx + 14 << "\" y=\"" << ly << "\" font-family=\"sans-serif\" "
                   "font-size=\"10\">"
                << json_escape(s.name) << "</text>\n";
        }
        out << "</g>\n";
    }
    out << "</svg>\n";
    if (!out) throw io_error("write failed on " + path);
}

} // namespace skiplab
