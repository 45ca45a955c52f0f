#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace techembed::testing {

// Independent ASCII splitter: alnum/underscore runs and punctuation runs.
inline std::vector<std::string> oracle_split(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    int cls = 0;  // 0 none, 1 word, 2 punct
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        const int k = std::isspace(c) ? 0 : (std::isalnum(c) || c == '_') ? 1 : 2;
        if (k != cls && !cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
        cls = k;
        if (k != 0) cur.push_back(static_cast<char>(std::tolower(c)));
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

inline double oracle_entropy(const std::string& text) {
    const auto toks = oracle_split(text);
    std::map<std::string, int> counts;
    for (const auto& t : toks) ++counts[t];
    double h = 0.0;
    for (const auto& [t, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(toks.size());
        h += -p * std::log2(p);
    }
    return h;
}

}  // namespace techembed::testing
