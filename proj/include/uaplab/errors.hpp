#pragma once

#include <stdexcept>
#include <string>

namespace uaplab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define UAPLAB_ERROR(Name)                  \
    class Name : public Error {             \
    public:                                 \
        using Error::Error;                 \
    };

// model-core
UAPLAB_ERROR(UnknownArchitecture)
UAPLAB_ERROR(ShapeMismatch)
UAPLAB_ERROR(InvalidInput)
UAPLAB_ERROR(InvalidClass)
UAPLAB_ERROR(EmptyDataset)
UAPLAB_ERROR(LabelOutOfRange)
UAPLAB_ERROR(IoError)
UAPLAB_ERROR(VersionMismatch)
UAPLAB_ERROR(CorruptCheckpoint)
UAPLAB_ERROR(CorruptFile)

// data-pipeline
UAPLAB_ERROR(EmptyResult)
UAPLAB_ERROR(InvalidSigma)
UAPLAB_ERROR(MissingImage)
UAPLAB_ERROR(BadGrade)
UAPLAB_ERROR(MalformedCsv)
UAPLAB_ERROR(BadProportions)
UAPLAB_ERROR(ClassTooSmall)

// attacks
UAPLAB_ERROR(InvalidBudget)
UAPLAB_ERROR(MaxIterExceeded)

// robustness
UAPLAB_ERROR(SourceMismatch)
UAPLAB_ERROR(EmptyVotes)
UAPLAB_ERROR(EmptyZoo)
UAPLAB_ERROR(MissingPerturbation)

// analysis
UAPLAB_ERROR(LengthMismatch)
UAPLAB_ERROR(DegenerateMarginals)
UAPLAB_ERROR(DegenerateVariance)
UAPLAB_ERROR(OutOfRange)
UAPLAB_ERROR(UnsupportedFormat)

#undef UAPLAB_ERROR

} // namespace uaplab
