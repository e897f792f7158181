#pragma once

// Golden values produced by tests/oracles/fixtures.py, which re-implements
// the generator, weight init and one decoder layer without this library.

#include <cstdint>

#include "memix/tensor.hpp"

namespace memix::fixtures {

inline constexpr std::uint64_t kSplitMixSeed0 = 0xE220A8397B1DCDAFull;

inline const Matrix kMatmulA{{0.4129824435274134, 0.953193296650054, 0.7193244778672023},
                             {0.3735966740943617, 0.3721703088232211, 0.3341811313224574},
                             {0.9998792272714978, -0.035286125585899386, 0.23968048660857977}};
inline const Matrix kMatmulB{{-0.7185292840389987, 0.4582541257809085, 0.8028965281016698},
                             {-0.4822692935563424, -0.7050771260529904, 0.84152879513632},
                             {-0.32351978889644917, -0.06347715955726119, -0.44039531638304474}};
inline const Matrix kMatmulAB{{-0.989151540494137, -0.5284845562084973, 0.8169346455246458},
                              {-0.5560406717338114, -0.1124194234595456, 0.4659796990522139},
                              {-0.7789664708684105, 0.4678639847062266, 0.6675511056171076}};

// Seed 42, L=1, H=1, d=2.
inline const Matrix kStateQuery{{0.34162432775212515, -0.4809593348155971}, {-0.3131052842872572, -0.22034760183590596}};
inline const Matrix kStateKey{{-0.6533240010575967, 0.5207531398986642}, {-0.39823519414605335, 0.4251576773299126}};
inline const Matrix kStateValue{{-0.2263716956785206, 0.16755894513883485}, {-0.4173318317016284, -0.00991478853242389}};
inline const Matrix kImageQuery{{0.01894496938591128, 0.02830307972673829}, {0.23357067870648673, -0.4194060905513083}};
inline const Matrix kImageKey{{-0.5606306923764955, -0.006365858694217574}, {-0.5749801238853768, 0.26721052241127596}};
inline const Matrix kImageValue{{0.6467555535165113, -0.6037931501379549}, {0.14116157076907432, 0.16944970418475902}};

// Decode of S = X = I_2 with those weights.
inline const Matrix kStateLogits{{-0.33492286387044784, -0.24079134384505604}, {0.06350702181566568, 0.021925308807313432}};
inline const Matrix kStateAttention{{0.476484481177453, 0.5235155188225469}, {0.5103939306694104, 0.4896060693305896}};
inline const Matrix kCandidate{{0.6736577096369181, 0.0746486913785513}, {-0.31986693727562915, 1.080666727986626}};
inline const Matrix kDecoded{{1.393290808099622, -0.21615047656159692}, {0.4045070988487425, 0.766695607510381}};
inline const Vector kBeta{0.42852856427332253, 0.5106774178128883};
inline const Matrix kTttState{{0.8601530068490407, 0.03198909654133294}, {-0.1633488215716354, 1.0411946763516249}};

}  // namespace memix::fixtures
