from pocketflow import Flow

from nodes import (
    CrossValidateFolds,
    FitModel,
    GenerateEpochs,
    LoadEpochs,
    LoadModel,
    LoadPredictInputs,
    LoadTrainingData,
    PlanFolds,
    Predict,
    PrepareBenchDatasets,
    PreprocessEpochs,
    RunBenchSeeds,
    WriteBenchTable,
    WriteCrossvalMetrics,
    WriteEpochs,
    WriteFitOutputs,
    WritePredictions,
    WriteRunManifest,
)


def create_fit_flow():
    """Load (X, Y), fit the chosen variant, write model/trace/report and the run manifest."""
    load = LoadTrainingData()
    fit = FitModel()
    write = WriteFitOutputs()
    manifest = WriteRunManifest()

    load >> fit >> write >> manifest
    return Flow(start=load)


def create_predict_flow():
    load_model = LoadModel()
    load_inputs = LoadPredictInputs()
    predict = Predict()
    write = WritePredictions()
    manifest = WriteRunManifest()

    load_model >> load_inputs >> predict >> write >> manifest
    return Flow(start=load_model)


def create_crossval_flow():
    """
    Epochs -> (optional band-pass / decimation) -> folds -> one fit per fold.
    LoadEpochs returns "preprocess" only when a band or target rate is configured.
    """
    load = LoadEpochs()
    prep = PreprocessEpochs()
    plan = PlanFolds()
    folds = CrossValidateFolds()
    write = WriteCrossvalMetrics()
    manifest = WriteRunManifest()

    load - "preprocess" >> prep
    load >> plan
    prep >> plan
    plan >> folds >> write >> manifest
    return Flow(start=load)


def create_bench_flow():
    datasets = PrepareBenchDatasets()
    seeds = RunBenchSeeds()
    write = WriteBenchTable()
    manifest = WriteRunManifest()

    datasets >> seeds >> write >> manifest
    return Flow(start=datasets)


def create_synth_flow():
    generate = GenerateEpochs()
    write = WriteEpochs()
    manifest = WriteRunManifest()

    generate >> write >> manifest
    return Flow(start=generate)


FLOWS = {
    "fit": create_fit_flow,
    "predict": create_predict_flow,
    "crossval": create_crossval_flow,
    "bench-precond": create_bench_flow,
    "synth": create_synth_flow,
}
