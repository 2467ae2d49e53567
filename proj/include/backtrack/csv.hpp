#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace backtrack::csv {

// Minimal RFC-ish CSV: comma-delimited, optional double-quoted fields,
// header row, '.' decimal separator. Numbers are written with enough digits
// to round-trip exactly, so identical runs produce byte-identical files.

inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline std::vector<std::string> split_line(const std::string& line, std::size_t line_no) {
    std::vector<std::string> out;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
    }
    if (quoted) throw std::runtime_error("line " + std::to_string(line_no) + ": unterminated quote");
    out.push_back(field);
    return out;
}

struct Document {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline Document read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    Document doc;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() && in.peek() == EOF) break;
        auto fields = split_line(line, line_no);
        if (line_no == 1)
            doc.header = std::move(fields);
        else
            doc.rows.push_back(std::move(fields));
    }
    if (doc.header.empty()) throw std::runtime_error("'" + path + "' has no header row");
    return doc;
}

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path) {
        if (!out_) throw std::runtime_error("cannot write '" + path + "'");
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            write_field(fields[i]);
        }
        out_ << '\n';
    }

private:
    void write_field(const std::string& f) {
        if (f.find_first_of(",\"\n") == std::string::npos) {
            out_ << f;
            return;
        }
        out_ << '"';
        for (char c : f) {
            if (c == '"') out_ << "\"\"";
            else out_ << c;
        }
        out_ << '"';
    }

    std::ofstream out_;
};

}  // namespace backtrack::csv
