#include "bytesleuth/common.hpp"

namespace bytesleuth {

const char* errc_name(Errc c) {
    switch (c) {
        case Errc::MissingMzMagic: return "MissingMzMagic";
        case Errc::MissingPeSignature: return "MissingPeSignature";
        case Errc::TruncatedHeader: return "TruncatedHeader";
        case Errc::OverlappingSections: return "OverlappingSections";
        case Errc::NotPe32: return "NotPe32";
        case Errc::InvariantViolation: return "InvariantViolation";
        case Errc::SectionTableFull: return "SectionTableFull";
        case Errc::RvaOutOfRange: return "RvaOutOfRange";
        case Errc::Unmapped: return "Unmapped";
        case Errc::EmptyFile: return "EmptyFile";
        case Errc::OverlappingBlocks: return "OverlappingBlocks";
        case Errc::OutOfBounds: return "OutOfBounds";
        case Errc::LengthMismatch: return "LengthMismatch";
        case Errc::RemoteUnavailable: return "RemoteUnavailable";
        case Errc::MalformedReply: return "MalformedReply";
        case Errc::Timeout: return "Timeout";
        case Errc::EmptyCorpus: return "EmptyCorpus";
        case Errc::DegenerateDesign: return "DegenerateDesign";
        case Errc::UnlabeledMap: return "UnlabeledMap";
        case Errc::EmptyInput: return "EmptyInput";
        case Errc::DisplacementOverflow: return "DisplacementOverflow";
        case Errc::RangeTooSmall: return "RangeTooSmall";
        case Errc::NotExecutableSection: return "NotExecutableSection";
        case Errc::RelocationsPresent: return "RelocationsPresent";
        case Errc::StructuralRange: return "StructuralRange";
        case Errc::OverlapFault: return "OverlapFault";
        case Errc::UnknownOpcode: return "UnknownOpcode";
        case Errc::StepLimitExceeded: return "StepLimitExceeded";
        case Errc::WriteFault: return "WriteFault";
        case Errc::NoPositiveWeights: return "NoPositiveWeights";
        case Errc::UnsupportedBinary: return "UnsupportedBinary";
        case Errc::IoError: return "IoError";
        case Errc::BadArguments: return "BadArguments";
    }
    return "UnknownError";
}

}  // namespace bytesleuth
