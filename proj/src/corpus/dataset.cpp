#include "regtext/corpus/dataset.hpp"

#include <fstream>
#include <sstream>

#include "regtext/error.hpp"

namespace regtext::corpus {

const std::vector<DatasetInfo>& known_datasets() {
    static const std::vector<DatasetInfo> infos = {
        {"ag_news", 4, 120000, 9600, 600},
        {"dbpedia", 14, 560000, 70000, 1400},
        {"yahoo", 10, 1400000, 60000, 1400},
        {"yelp_polarity", 2, 560000, 38000, 600},
    };
    return infos;
}

std::optional<DatasetInfo> dataset_info(const std::string& name) {
    for (const auto& d : known_datasets())
        if (d.name == name) return d;
    return std::nullopt;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& content) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t line_no = 1;

    auto end_field = [&]() {
        row.push_back(field);
        field.clear();
        field_started = false;
    };
    auto end_row = [&]() {
        end_field();
        rows.push_back(row);
        row.clear();
    };

    for (std::size_t i = 0; i < content.size(); ++i) {
        const char c = content[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < content.size() && content[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line_no;
                field += c;
            }
        } else {
            switch (c) {
                case '"':
                    check(field.empty() && !field_started, "csv: line ", line_no,
                          ": quote inside unquoted field");
                    in_quotes = true;
                    field_started = true;
                    break;
                case ',':
                    end_field();
                    break;
                case '\r':
                    break;
                case '\n':
                    end_row();
                    ++line_no;
                    break;
                default:
                    field += c;
                    field_started = true;
            }
        }
    }
    check(!in_quotes, "csv: unterminated quoted field at end of input");
    if (field_started || !field.empty() || !row.empty()) end_row();
    return rows;
}

std::string csv_quote(const std::string& field) {
    bool needs = field.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

LabeledDataset load_dataset_csv(const std::string& path, int expected_classes) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "load_dataset: cannot open ", path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const auto rows = parse_csv(buf.str());

    LabeledDataset out;
    out.docs.reserve(rows.size());
    int max_label = -1;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        check(row.size() >= 2, "load_dataset: row ", r + 1, " has ", row.size(),
              " fields, need class + text");
        int cls = 0;
        try {
            std::size_t pos = 0;
            cls = std::stoi(row[0], &pos);
            check(pos == row[0].size(), "trailing characters");
        } catch (const std::exception&) {
            fail("load_dataset: row ", r + 1, ": class field '", row[0], "' is not an integer");
        }
        check(cls >= 1, "load_dataset: row ", r + 1, ": class ", cls, " is not 1-based");
        std::string text;
        for (std::size_t f = 1; f < row.size(); ++f) {
            if (f > 1) text += ' ';
            text += row[f];
        }
        out.docs.push_back({std::move(text), cls - 1});
        max_label = std::max(max_label, cls - 1);
    }
    out.num_classes = max_label + 1;
    if (expected_classes >= 0)
        check(out.num_classes == expected_classes, "load_dataset: ", path, " has ",
              out.num_classes, " classes, expected ", expected_classes);
    return out;
}

}  // namespace regtext::corpus
