#include "evolab/prompts.hpp"

#include <fmt/format.h>

namespace evolab::prompts {

std::string repair_suffix(std::string_view missing, std::string_view previous_answer) {
    return fmt::format(
        "\n\nYour previous answer could not be used because these sections were missing or empty: {}.\n"
        "Previous answer:\n<<<\n{}\n>>>\nAnswer again with every requested section present and non-empty.\n",
        missing, previous_answer);
}

}  // namespace evolab::prompts
