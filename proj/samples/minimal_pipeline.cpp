// Both stages on a synthetic scenario, in memory: profile heads on a
// diagnostic corpus, then build the guidance map for one record.

#include "havc/havc.hpp"

#include <iostream>

int main()
{
    auto spec = havc::make_localization_scenario(7);

    auto scores = havc::accumulate(havc::gen_diagnostic_corpus(spec, 200));
    const auto experts = havc::normalize_and_filter(scores);
    std::cout << experts.heads.size() << " expert heads\n";

    const auto record = havc::gen_inference_record(spec);
    const auto result = havc::run_pipeline(experts, record);
    for (const auto& a : result.selected)
        std::cout << havc::to_string(a.head) << " E=" << a.entropy << " w=" << a.weight << '\n';

    const auto& b = result.crop;
    std::cout << "crop [" << b.x0 << ", " << b.y0 << ", " << b.x1 << ", " << b.y1 << ")  IoU "
              << havc::iou(b.patch, spec.planted_region) << '\n';
}
